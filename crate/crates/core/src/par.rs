//! Order-preserving map that runs on rayon when the `parallel` feature is
//! enabled and the caller asks for it, and sequentially otherwise.

/// Maps `f` over `items`, keeping input order in the output.
pub fn map_ordered<T, R, F>(items: Vec<T>, parallel: bool, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return items.into_par_iter().map(f).collect();
    }
    let _ = parallel;
    items.into_iter().map(f).collect()
}

/// Whether parallel execution is compiled in.
pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_output_either_way() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map_ordered(xs.clone(), true, |x| x * x + 1);
        let b = map_ordered(xs, false, |x| x * x + 1);
        assert_eq!(a, b);
    }
}
