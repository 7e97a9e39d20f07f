/// Result of an early-stopped run.
#[derive(Clone, Debug, PartialEq)]
pub struct StopOutcome<S> {
    /// 1-based epoch whose state was kept.
    pub best_epoch: usize,
    pub best_value: f64,
    pub best_state: S,
    pub epochs_run: usize,
}

/// Runs `epoch(1)`, `epoch(2)`, ... up to `max_epochs`, each returning a
/// validation score (lower is better) and the state it was measured on.
///
/// Keeps the state of the strictly lowest score and stops once `patience`
/// consecutive epochs fail to beat it.
pub fn early_stopping<S, E>(
    max_epochs: usize,
    patience: usize,
    mut epoch: impl FnMut(usize) -> Result<(f64, S), E>,
) -> Result<Option<StopOutcome<S>>, E> {
    let mut best: Option<StopOutcome<S>> = None;
    let mut stale = 0;
    for e in 1..=max_epochs {
        let (value, state) = epoch(e)?;
        match &mut best {
            Some(b) if !(value < b.best_value) => {
                b.epochs_run = e;
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
            _ => {
                best = Some(StopOutcome {
                    best_epoch: e,
                    best_value: value,
                    best_state: state,
                    epochs_run: e,
                });
                stale = 0;
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn run(seq: &[f64], max_epochs: usize, patience: usize) -> (StopOutcome<usize>, Vec<usize>) {
        let mut calls = Vec::new();
        let out = early_stopping::<_, Infallible>(max_epochs, patience, |e| {
            calls.push(e);
            Ok((seq[e - 1], e))
        })
        .unwrap()
        .unwrap();
        (out, calls)
    }

    #[test]
    fn stops_after_five_stale_epochs_and_keeps_epoch_two() {
        let seq = [3.0, 2.5, 2.6, 2.7, 2.8, 2.9, 3.0, 1.0, 1.0];
        let (out, calls) = run(&seq, 9, 5);
        assert_eq!(calls, [1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(out.best_epoch, 2);
        assert_eq!(out.best_state, 2);
        assert_eq!(out.best_value, 2.5);
        assert_eq!(out.epochs_run, 7);
    }

    #[test]
    fn monotone_decrease_runs_every_epoch() {
        let seq = [5.0, 4.0, 3.0, 2.0, 1.0];
        let (out, calls) = run(&seq, 5, 5);
        assert_eq!(calls.len(), 5);
        assert_eq!(out.best_epoch, 5);
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        let seq = [2.0, 2.0, 2.0];
        let (out, calls) = run(&seq, 3, 2);
        assert_eq!(calls, [1, 2, 3]);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn kept_value_is_never_worse_than_any_seen() {
        let seq = [4.0, 3.5, 3.9, 3.1, 3.2, 3.3, 2.9, 3.0];
        let (out, calls) = run(&seq, 8, 3);
        let seen = &seq[..calls.len()];
        assert!(seen.iter().all(|&v| out.best_value <= v));
    }

    #[test]
    fn errors_propagate() {
        let r = early_stopping::<(), _>(3, 1, |e| if e == 2 { Err("boom") } else { Ok((1.0, ())) });
        assert_eq!(r.unwrap_err(), "boom");
    }
}
