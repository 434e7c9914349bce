//! Order-preserving fan-out over scoped threads.

use crate::error::{Error, Result};

/// Environment variable holding the worker count.
pub const THREADS_ENV: &str = "PROUST_THREADS";

/// Worker count from `PROUST_THREADS`, else the available parallelism.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV}={v:?} is not a positive integer"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Map `f` over `items` on up to `threads` threads. Results come back in
/// input order, so reductions over them are deterministic.
pub fn map_ordered<T, U, F>(items: &[T], threads: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    let parts: Vec<Result<Vec<U>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<U>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Evaluation("worker thread panicked".into())))
            })
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_order_and_errors() {
        let xs: Vec<u32> = (0..37).collect();
        for t in [1, 2, 5, 64] {
            let ys = map_ordered(&xs, t, |x| Ok(x * 2)).unwrap();
            assert_eq!(ys, xs.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
        let r = map_ordered(&xs, 3, |&x| {
            if x == 30 {
                Err(Error::Input("boom".into()))
            } else {
                Ok(x)
            }
        });
        assert!(r.is_err());
        assert!(map_ordered(&Vec::<u32>::new(), 4, |&x| Ok(x))
            .unwrap()
            .is_empty());
    }
}
