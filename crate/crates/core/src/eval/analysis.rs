use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{sq_dist, Mat64};

use super::stats::mann_whitney_u;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub bucket: usize,
    pub count: usize,
    pub accuracy: f64,
    pub min_distance: f64,
    pub max_distance: f64,
}

/// Accuracy by distance to the centroid of `reference`.
///
/// Examples of `eval` are ordered by Euclidean distance to that centroid
/// and cut into `buckets` contiguous groups whose sizes differ by at most
/// one (the first groups take the extra elements). Buckets run from near
/// to far.
pub fn distance_bucket_accuracy(
    reference: &Mat64,
    eval: &Mat64,
    preds: &[usize],
    labels: &[usize],
    buckets: usize,
) -> Result<Vec<BucketAccuracy>> {
    let n = eval.rows();
    if buckets < 2 {
        return Err(Error::Config("need at least 2 buckets".into()));
    }
    if n < buckets {
        return Err(Error::Data(format!(
            "{n} examples cannot fill {buckets} buckets"
        )));
    }
    if reference.rows() == 0 {
        return Err(Error::Data("reference embeddings are empty".into()));
    }
    if reference.cols() != eval.cols() {
        return Err(Error::Dimension {
            expected: reference.cols(),
            got: eval.cols(),
        });
    }
    if preds.len() != n || labels.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: preds.len().min(labels.len()),
        });
    }

    let mut centroid = vec![0.0; reference.cols()];
    for row in reference.iter_rows() {
        crate::numerics::axpy(1.0, row, &mut centroid);
    }
    centroid
        .iter_mut()
        .for_each(|c| *c /= reference.rows() as f64);

    let dist: Vec<f64> = eval
        .iter_rows()
        .map(|r| sq_dist(r, &centroid).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));

    let (base, extra) = (n / buckets, n % buckets);
    let mut out = Vec::with_capacity(buckets);
    let mut start = 0;
    for b in 0..buckets {
        let size = base + usize::from(b < extra);
        let members = &order[start..start + size];
        let hits = members.iter().filter(|&&i| preds[i] == labels[i]).count();
        out.push(BucketAccuracy {
            bucket: b,
            count: size,
            accuracy: hits as f64 / size as f64,
            min_distance: dist[members[0]],
            max_distance: dist[members[size - 1]],
        });
        start += size;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: String,
    pub count: usize,
    pub group_accuracy: f64,
    pub complement_accuracy: f64,
    pub u_statistic: f64,
    pub p_value: f64,
}

/// Per-group accuracy against the rest of the data.
///
/// For every group tag carried by at least `min_count` examples, the 0/1
/// correctness of its members is compared with that of all other examples
/// by a Mann-Whitney test. Groups covering the whole dataset have no
/// complement and are left out. Reports are sorted by p-value, then name.
pub fn group_analysis(ds: &Dataset, preds: &[usize], min_count: usize) -> Result<Vec<GroupReport>> {
    if preds.len() != ds.len() {
        return Err(Error::Dimension {
            expected: ds.len(),
            got: preds.len(),
        });
    }
    let correct: Vec<f64> = ds
        .examples()
        .iter()
        .zip(preds)
        .map(|(e, &p)| if e.label == p { 1.0 } else { 0.0 })
        .collect();
    let mut names: Vec<&String> = ds.examples().iter().flat_map(|e| &e.groups).collect();
    names.sort();
    names.dedup();

    let mut out = Vec::new();
    for name in names {
        let (mut inside, mut outside) = (Vec::new(), Vec::new());
        for (e, &c) in ds.examples().iter().zip(&correct) {
            if e.groups.contains(name) {
                inside.push(c);
            } else {
                outside.push(c);
            }
        }
        if inside.len() < min_count.max(1) || outside.is_empty() {
            continue;
        }
        let test = mann_whitney_u(&inside, &outside)?;
        out.push(GroupReport {
            group: name.clone(),
            count: inside.len(),
            group_accuracy: crate::numerics::mean(&inside),
            complement_accuracy: crate::numerics::mean(&outside),
            u_statistic: test.u,
            p_value: test.p,
        });
    }
    out.sort_by(|a, b| {
        a.p_value
            .total_cmp(&b.p_value)
            .then_with(|| a.group.cmp(&b.group))
    });
    Ok(out)
}

/// Mean intra-class pairwise distance divided by mean inter-class pairwise
/// distance. `None` without any intra-class or inter-class pair.
pub fn intra_inter_ratio(embeddings: &Mat64, labels: &[usize]) -> Option<f64> {
    let (mut intra, mut ni, mut inter, mut no) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..embeddings.rows() {
        for j in (i + 1)..embeddings.rows() {
            let d = sq_dist(embeddings.row(i), embeddings.row(j)).sqrt();
            if labels[i] == labels[j] {
                intra += d;
                ni += 1;
            } else {
                inter += d;
                no += 1;
            }
        }
    }
    if ni == 0 || no == 0 || inter == 0.0 {
        return None;
    }
    Some((intra / ni as f64) / (inter / no as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::LabeledExample;
    use crate::numerics::{Rng, Vec64};
    use std::collections::BTreeSet;

    fn line(n: usize) -> Mat64 {
        Mat64::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn all_correct_buckets() {
        let x = line(23);
        let y = vec![0; 23];
        let b = distance_bucket_accuracy(&x, &x, &y, &y, 5).unwrap();
        assert!(b.iter().all(|b| b.accuracy == 1.0));
        let sizes: Vec<usize> = b.iter().map(|b| b.count).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
    }

    #[test]
    fn equal_buckets_of_a_hundred() {
        let mut rng = Rng::new(1);
        let x = Mat64::new(500, 3, (0..1500).map(|_| rng.gaussian()).collect()).unwrap();
        let y = vec![1; 500];
        let b = distance_bucket_accuracy(&x, &x, &y, &y, 5).unwrap();
        assert!(b.iter().all(|b| b.count == 100));
        assert!(b.windows(2).all(|w| w[0].max_distance <= w[1].min_distance));
    }

    #[test]
    fn far_errors_land_in_the_last_bucket() {
        let mut rng = Rng::new(2);
        let x = Mat64::new(200, 2, (0..400).map(|_| rng.gaussian()).collect()).unwrap();
        let dist: Vec<f64> = x.iter_rows().map(crate::numerics::norm).collect();
        let mut sorted = dist.clone();
        sorted.sort_by(f64::total_cmp);
        let cut = sorted[160];
        let y = vec![0; 200];
        let preds: Vec<usize> = dist
            .iter()
            .map(|&d| usize::from(d >= cut && d > 0.0))
            .collect();
        // reference centred on the origin
        let reference = Mat64::from_rows(&[[1.0, 1.0], [-1.0, -1.0]]).unwrap();
        let b = distance_bucket_accuracy(&reference, &x, &preds, &y, 5).unwrap();
        let last = b[4].accuracy;
        assert!(b[..4].iter().all(|b| b.accuracy > last));
    }

    #[test]
    fn bucket_preconditions() {
        let x = line(3);
        assert!(distance_bucket_accuracy(&x, &x, &[0; 3], &[0; 3], 4).is_err());
        assert!(distance_bucket_accuracy(&x, &x, &[0; 3], &[0; 3], 1).is_err());
    }

    fn tagged(n: usize, tag: impl Fn(usize) -> Vec<&'static str>) -> Dataset {
        let examples = (0..n)
            .map(|i| LabeledExample {
                id: format!("e{i}"),
                label: i % 2,
                embedding: Vec64::new(vec![i as f64]).unwrap(),
                text: None,
                groups: tag(i)
                    .into_iter()
                    .map(String::from)
                    .collect::<BTreeSet<_>>(),
            })
            .collect();
        Dataset::new("t", examples, 2, 1).unwrap()
    }

    #[test]
    fn failing_group_ranks_first() {
        let ds = tagged(40, |i| {
            if i < 8 {
                vec!["bad"]
            } else if i % 3 == 0 {
                vec!["noise"]
            } else {
                vec![]
            }
        });
        let preds: Vec<usize> = (0..40)
            .map(|i| if i < 8 { 1 - i % 2 } else { i % 2 })
            .collect();
        let r = group_analysis(&ds, &preds, 1).unwrap();
        assert_eq!(r[0].group, "bad");
        assert_eq!(r[0].group_accuracy, 0.0);
        assert_eq!(r[0].complement_accuracy, 1.0);
        assert!(r[0].p_value < r[1].p_value);
    }

    #[test]
    fn whole_dataset_group_is_skipped() {
        let ds = tagged(10, |_| vec!["all"]);
        let r = group_analysis(&ds, &[0; 10], 1).unwrap();
        assert!(r.is_empty());
        let plain = tagged(10, |_| vec![]);
        assert!(group_analysis(&plain, &[0; 10], 1).unwrap().is_empty());
    }

    #[test]
    fn ratio_of_tight_clusters_is_small() {
        let e = Mat64::from_rows(&[[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]]).unwrap();
        let r = intra_inter_ratio(&e, &[0, 0, 1, 1]).unwrap();
        assert!((r - 0.1 / 10.0).abs() < 1e-12);
        assert!(intra_inter_ratio(&e, &[0, 1, 2, 3]).is_none());
    }
}
