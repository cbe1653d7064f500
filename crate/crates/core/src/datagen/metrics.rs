use crate::error::{Error, Result};

/// Pooled intersections and unions per class over any number of masks.
#[derive(Clone, Debug, PartialEq)]
pub struct IouAccumulator {
    pub intersection: Vec<u64>,
    pub union: Vec<u64>,
    pub correct: u64,
    pub total: u64,
}

impl IouAccumulator {
    pub fn new(num_classes: usize) -> Self {
        IouAccumulator { intersection: vec![0; num_classes], union: vec![0; num_classes], correct: 0, total: 0 }
    }

    pub fn add(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!("prediction has {} points, truth has {}", pred.len(), truth.len())));
        }
        let n = self.union.len();
        for (&p, &t) in pred.iter().zip(truth) {
            let (p, t) = (p as usize, t as usize);
            if p >= n || t >= n {
                return Err(Error::Domain(format!("class id {} out of range for {n} classes", p.max(t))));
            }
            if p == t {
                self.intersection[p] += 1;
                self.union[p] += 1;
                self.correct += 1;
            } else {
                self.union[p] += 1;
                self.union[t] += 1;
            }
        }
        self.total += pred.len() as u64;
        Ok(())
    }

    /// IoU per class; `None` for classes absent from both prediction and truth.
    pub fn per_class(&self) -> Vec<Option<f64>> {
        self.intersection
            .iter()
            .zip(&self.union)
            .map(|(&i, &u)| if u == 0 { None } else { Some(i as f64 / u as f64) })
            .collect()
    }

    pub fn miou(&self, drop_background: bool) -> Result<f64> {
        let skip = usize::from(drop_background);
        let vals: Vec<f64> = self.per_class().into_iter().skip(skip).flatten().collect();
        if vals.is_empty() {
            return Err(Error::UndefinedMetric("no class present in prediction or truth".into()));
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn accuracy(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::UndefinedMetric("no points evaluated".into()));
        }
        Ok(self.correct as f64 / self.total as f64)
    }
}

/// Mean IoU over classes present in `pred` or `truth`.
pub fn miou(pred: &[u8], truth: &[u8], num_classes: usize, drop_background: bool) -> Result<f64> {
    let mut acc = IouAccumulator::new(num_classes);
    acc.add(pred, truth)?;
    acc.miou(drop_background)
}

pub fn accuracy(pred: &[u8], truth: &[u8]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape("prediction and truth differ in length".into()));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("no points evaluated".into()));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_enumerated_cases() {
        assert_eq!(miou(&[0, 1, 2, 2], &[0, 1, 2, 2], 3, true).unwrap(), 1.0);
        assert_eq!(miou(&[1, 1, 0, 0], &[0, 0, 1, 1], 2, true).unwrap(), 0.0);
        assert_eq!(miou(&[1, 0, 0, 0], &[1, 1, 0, 0], 2, true).unwrap(), 0.5);
        assert!(matches!(miou(&[0, 0], &[0, 0], 3, true), Err(Error::UndefinedMetric(_))));
        assert_eq!(miou(&[0, 0], &[0, 0], 3, false).unwrap(), 1.0);
    }
}
