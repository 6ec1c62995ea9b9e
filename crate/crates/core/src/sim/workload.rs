use super::config::Pattern;
use crate::types::SimTime;

/// Injection instants and how many transfers each carries, in time order.
pub fn schedule(pattern: &Pattern, duration: f64) -> Vec<(SimTime, usize)> {
    let mut out = match pattern {
        Pattern::None => Vec::new(),
        Pattern::Constant {
            interval,
            start,
            end,
        } => {
            let end = end.unwrap_or(duration).min(duration);
            let step = SimTime::from_secs_f64(*interval).micros();
            let end = SimTime::from_secs_f64(end).micros();
            let mut t = SimTime::from_secs_f64(*start).micros();
            let mut v = Vec::new();
            while t < end {
                v.push((SimTime(t), 1));
                t += step;
            }
            v
        }
        Pattern::Burst { bursts } => bursts
            .iter()
            .filter(|b| b.at < duration && b.count > 0)
            .map(|b| (SimTime::from_secs_f64(b.at), b.count))
            .collect(),
    };
    out.sort_by_key(|(t, _)| *t);
    out
}
