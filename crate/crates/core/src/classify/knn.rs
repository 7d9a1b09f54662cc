//! Plain k-nearest-neighbour baseline.

use super::Corpus;

/// Majority label among the `k` Euclidean-nearest training vectors.
/// Equal distances are ordered by corpus row; vote ties go to label 0.
pub fn knn_classify(test: &[f64], corpus: &Corpus, k: usize) -> u8 {
    assert!(k >= 1, "k must be at least 1");
    assert_eq!(test.len(), corpus.dim(), "test vector dimension");
    let mut dist: Vec<(f64, usize)> = (0..corpus.len())
        .map(|i| {
            let d2 = corpus.vector(i).iter().zip(test).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (d2, i)
        })
        .collect();
    let k = k.min(dist.len());
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, order);
    }
    let ones = dist[..k].iter().filter(|(_, i)| corpus.label(*i) == 1).count();
    u8::from(2 * ones > k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Corpus {
        let rows = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0], vec![6.0, 5.0], vec![5.0, 6.0]];
        Corpus::from_rows(&rows, vec![0, 0, 1, 1, 1]).unwrap()
    }

    #[test]
    fn exact_match_with_k1() {
        let c = corpus();
        for i in 0..c.len() {
            assert_eq!(knn_classify(c.vector(i), &c, 1), c.label(i));
        }
    }

    #[test]
    fn full_k_is_global_majority() {
        assert_eq!(knn_classify(&[0.0, 0.0], &corpus(), 5), 1);
    }

    #[test]
    fn vote_tie_goes_to_zero() {
        let rows = vec![vec![0.0], vec![2.0]];
        let c = Corpus::from_rows(&rows, vec![1, 0]).unwrap();
        assert_eq!(knn_classify(&[1.0], &c, 2), 0);
    }
}
