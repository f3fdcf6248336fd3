use rand::Rng;

use super::{param_group, Graph, Model};
use crate::error::Result;
use crate::tensor::Var;

/// Analytic vs central-difference comparison for one tensor entry.
#[derive(Clone, Debug)]
pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn rel_error(&self, floor: f64) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(floor)
    }
}

/// Worst relative error per parameter group.
#[derive(Clone, Debug)]
pub struct GroupError {
    pub group: String,
    pub samples: usize,
    pub max_rel_error: f64,
}

/// Compare reverse-mode gradients of `loss` with central differences at
/// `per_tensor` random entries of every tensor.
pub fn check_gradients<R, F>(
    model: &Model<f64>,
    loss: F,
    per_tensor: usize,
    step: f64,
    rng: &mut R,
) -> Result<Vec<GradSample>>
where
    R: Rng + ?Sized,
    F: Fn(&Model<f64>, &mut Graph<f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = model.graph(true);
        let l = loss(model, &mut g)?;
        g.gradients(l)
    };
    let eval = |m: &Model<f64>| -> Result<f64> {
        let mut g = m.graph(false);
        let l = loss(m, &mut g)?;
        Ok(g.value(l).data()[0])
    };
    let mut probe = model.clone();
    let mut out = Vec::new();
    for id in model.params().ids() {
        let numel = model.params().get(id).numel();
        let mut picks: Vec<usize> = (0..per_tensor.min(numel)).map(|_| rng.random_range(0..numel)).collect();
        picks.sort_unstable();
        picks.dedup();
        for i in picks {
            let orig = probe.params().get(id).data()[i];
            probe.params_mut().get_mut(id).data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe.params_mut().get_mut(id).data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe.params_mut().get_mut(id).data_mut()[i] = orig;
            out.push(GradSample {
                name: model.params().name(id).to_string(),
                index: i,
                analytic: analytic[id.index()].data()[i],
                numeric: (up - down) / (2.0 * step),
            });
        }
    }
    Ok(out)
}

/// Aggregate samples by [`param_group`], in first-seen order.
pub fn group_errors(samples: &[GradSample], floor: f64) -> Vec<GroupError> {
    let mut groups: Vec<GroupError> = Vec::new();
    for s in samples {
        let name = param_group(&s.name);
        let e = s.rel_error(floor);
        match groups.iter_mut().find(|g| g.group == name) {
            Some(g) => {
                g.samples += 1;
                g.max_rel_error = g.max_rel_error.max(e);
            }
            None => groups.push(GroupError { group: name.to_string(), samples: 1, max_rel_error: e }),
        }
    }
    groups
}
