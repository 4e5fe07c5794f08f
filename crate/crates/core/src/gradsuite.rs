//! Finite-difference verification of every differentiable component on
//! small random instances (S ≤ 9, D ≤ 8, four graph layers).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::contrast::{asi_loss, cross_graph_loss, cross_scope_loss, ContrastError, DEFAULT_TAU};
use crate::graphs::{gnn_forward, sem_adjacency, GnnLayer};
use crate::harness::random_tree;
use crate::ingest::{AnnotatedSample, Aspect, DepTree, Polarity};
use crate::model::{Model, ModelError, Task, TrainConfig};
use crate::pretrain::assc_loss;
use crate::scope::{compute_scope, Scope, ScopeError};
use crate::tensor::gradcheck::{check, objective, DEFAULT_STEP};
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub const TOLERANCE: f64 = 1e-4;
pub const MAX_NODES: usize = 9;
pub const MAX_DIM: usize = 8;
pub const LAYERS: usize = 4;
/// Instances with a `relu` or `clamp_min` input closer than this to its kink
/// are redrawn; finite differences across a kink are meaningless.
pub const KINK_MARGIN: f64 = 1e-3;
const MAX_DRAWS: usize = 1000;
/// Added to every recorded gradient under `inject_fault`.
pub const FAULT: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Contrast(#[from] ContrastError),
    #[error(transparent)]
    Scope(#[from] ScopeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentCheck {
    pub component: &'static str,
    pub instances: usize,
    /// Draws discarded for sitting too close to a kink.
    pub redrawn: usize,
    pub max_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub seed: u64,
    pub tolerance: f64,
    pub components: Vec<ComponentCheck>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.passed)
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
    .expect("shape matches data")
}

/// Weighted sum, so that every output entry gets a distinct upstream
/// gradient.
fn weighted<'t>(x: Var<'t>, w: &Tensor) -> Result<Var<'t>, TensorError> {
    Ok(x.mul(x.tape().leaf(w.clone()))?.sum())
}

/// One to three targets with spans of up to two tokens, non-overlapping.
fn random_scopes(rng: &mut ChaCha8Rng, tree: &DepTree) -> Result<Vec<Scope>, ScopeError> {
    let n = tree.len();
    let k = rng.gen_range(1..=3.min(n));
    let mut starts: Vec<usize> = (1..=n).collect();
    let mut out = Vec::new();
    let mut used = vec![false; n + 2];
    for _ in 0..k {
        let i = rng.gen_range(0..starts.len());
        let s = starts.swap_remove(i);
        if used[s] {
            continue;
        }
        let e = if s < n && !used[s + 1] && rng.gen_bool(0.3) {
            s + 1
        } else {
            s
        };
        used[s..=e].iter_mut().for_each(|u| *u = true);
        out.push(compute_scope(tree, s, e)?);
    }
    Ok(out)
}

struct Suite {
    rng: ChaCha8Rng,
    bias: f64,
    redrawn: usize,
    components: Vec<ComponentCheck>,
}

fn kink_margin<F>(inputs: &[Tensor], f: &F) -> Result<f64, SuiteError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, SuiteError>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    f(&tape, &vars)?;
    Ok(tape.kink_margin())
}

impl Suite {
    fn record(&mut self, component: &'static str, errors: Vec<f64>) {
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        self.components.push(ComponentCheck {
            component,
            instances: errors.len(),
            redrawn: std::mem::take(&mut self.redrawn),
            max_error,
            passed: max_error < TOLERANCE,
        });
    }

    fn dims(&mut self) -> (usize, usize) {
        (
            self.rng.gen_range(3..=MAX_NODES),
            self.rng.gen_range(2..=MAX_DIM),
        )
    }

    fn run<F>(&self, inputs: &[Tensor], f: &F) -> Result<f64, SuiteError>
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, SuiteError>,
    {
        Ok(check(inputs, DEFAULT_STEP, self.bias, f)?
            .into_iter()
            .fold(0.0, f64::max))
    }

    /// Redraws with `draw` until the objective is smooth around the inputs.
    fn smooth_inputs<F>(
        &mut self,
        f: &F,
        mut draw: impl FnMut(&mut ChaCha8Rng) -> Vec<Tensor>,
    ) -> Result<Vec<Tensor>, SuiteError>
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, SuiteError>,
    {
        for _ in 0..MAX_DRAWS {
            let inputs = draw(&mut self.rng);
            if kink_margin(&inputs, f)? >= KINK_MARGIN {
                return Ok(inputs);
            }
            self.redrawn += 1;
        }
        panic!("no smooth instance in {MAX_DRAWS} draws");
    }

    fn tensor_ops(&mut self, instances: usize) -> Result<(), SuiteError> {
        let mut errors = Vec::new();
        for _ in 0..instances {
            let (s, d) = self.dims();
            let a = random(&mut self.rng, &[s, d], 1.0);
            let b = random(&mut self.rng, &[d, d], 1.0);
            let w = random(&mut self.rng, &[s, s], 1.0);
            let mask: Vec<bool> = (0..s).map(|i| i == 0 || self.rng.gen_bool(0.5)).collect();
            let f = objective(|_, v| {
                let h = v[0].matmul(v[1])?.sigmoid();
                let sims = h.cosine_matrix(v[0])?;
                let soft = weighted(sims.log_softmax_rows(), &w)?;
                let pooled = h.masked_mean_pool(&mask)?.exp().sum();
                let lse = v[0].matmul(v[0].transpose())?.log_sum_exp_rows().sum();
                Ok(soft.add(pooled)?.add(lse)?)
            });
            errors.push(self.run(&[a, b], &f)?);
        }
        self.record("tensor_ops", errors);
        Ok(())
    }

    fn sem_gnn(&mut self, instances: usize) -> Result<(), SuiteError> {
        let mut errors = Vec::new();
        for _ in 0..instances {
            let (s, d) = self.dims();
            let bound = 1.0 / (d as f64).sqrt();
            let w = random(&mut self.rng, &[s, d], 1.0);
            let f = objective(|_, v| {
                let a = sem_adjacency(v[0], v[1], v[2])?;
                let layers: Vec<GnnLayer<'_>> = v[3..]
                    .chunks(2)
                    .map(|p| GnnLayer { w: p[0], b: p[1] })
                    .collect();
                Ok(weighted(gnn_forward(a, v[0], &layers)?, &w)?)
            });
            let inputs = self.smooth_inputs(&f, |rng| {
                let mut inputs = vec![
                    random(rng, &[s, d], 1.0),
                    random(rng, &[d, d], 1.0),
                    random(rng, &[d, d], 1.0),
                ];
                for _ in 0..LAYERS {
                    inputs.push(random(rng, &[d, d], bound));
                    inputs.push(random(rng, &[d], 0.1));
                }
                inputs
            })?;
            errors.push(self.run(&inputs, &f)?);
        }
        self.record("sem_adjacency+gnn_forward", errors);
        Ok(())
    }

    fn contrast(&mut self, instances: usize) -> Result<(), SuiteError> {
        let (mut scope_err, mut graph_err, mut asi_err) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..instances {
            let (s, d) = self.dims();
            let tree = random_tree(&mut self.rng, s);
            let scopes = random_scopes(&mut self.rng, &tree)?;
            let x = random(&mut self.rng, &[s, d], 1.0);
            let y = random(&mut self.rng, &[s, d], 1.0);
            let tau = DEFAULT_TAU;
            let within = objective(|_, v| Ok(cross_scope_loss(v[0], &scopes, tau)?));
            let across = objective(|_, v| Ok(cross_graph_loss(v[0], v[1], &scopes, tau)?));
            let asi = objective(|_, v| Ok(asi_loss(v[0], v[1], &scopes, tau)?.total));
            scope_err.push(self.run(std::slice::from_ref(&x), &within)?);
            graph_err.push(self.run(&[x.clone(), y.clone()], &across)?);
            asi_err.push(self.run(&[x, y], &asi)?);
        }
        self.record("cross_scope_loss", scope_err);
        self.record("cross_graph_loss", graph_err);
        self.record("asi_loss", asi_err);
        Ok(())
    }

    fn sample(&mut self, s: usize, task: Task) -> AnnotatedSample {
        let tree = random_tree(&mut self.rng, s);
        let mut tokens = tree.tokens().to_vec();
        tokens[0].upos = "NOUN".into();
        let tree = DepTree::new(None, tokens).expect("same attachments");
        let aspect = |start: usize, polarity| Aspect {
            start,
            end: start,
            polarity,
        };
        let mut aspects = vec![aspect(1, Polarity::ALL[self.rng.gen_range(0..3)])];
        if task == Task::Masc {
            let second = self.rng.gen_range(2..=s);
            aspects.push(aspect(second, Polarity::ALL[self.rng.gen_range(0..3)]));
        }
        AnnotatedSample {
            sample_id: "grad".into(),
            tree,
            aspects,
            image_feature: None,
            scene_graph: None,
        }
    }

    fn task_loss(&mut self, task: Task, instances: usize) -> Result<(), SuiteError> {
        let mut errors = Vec::new();
        for _ in 0..instances {
            let (s, d) = self.dims();
            let sample = self.sample(s, task);
            let config = TrainConfig {
                dim: d,
                layers: LAYERS,
                seed: self.rng.gen(),
                ..TrainConfig::default()
            };
            let model = Model::new(
                task,
                config,
                Model::vocab_for(std::slice::from_ref(&sample)),
            )?;
            let lambda = model.config.lambda;
            let f = objective(|_, v| {
                let bound = model.params.rebind(v);
                let loss = model.sample_loss(&bound, &sample, lambda)?;
                Ok(loss.expect("sample has targets").total)
            });
            // Zero-initialized biases put dead graph nodes exactly on a ReLU
            // kink; jitter every parameter to a generic point.
            let inputs = self.smooth_inputs(&f, |rng| {
                model
                    .params
                    .iter()
                    .map(|(_, t)| {
                        let mut t = t.clone();
                        t.data_mut()
                            .iter_mut()
                            .for_each(|x| *x += rng.gen_range(-0.1..0.1));
                        t
                    })
                    .collect()
            })?;
            errors.push(self.run(&inputs, &f)?);
        }
        self.record(
            match task {
                Task::Mate => "mate_loss",
                Task::Masc => "masc_loss",
            },
            errors,
        );
        Ok(())
    }

    fn assc(&mut self, instances: usize) -> Result<(), SuiteError> {
        let mut errors = Vec::new();
        for _ in 0..instances {
            let (s, d) = self.dims();
            let n = self.rng.gen_range(1..=3);
            let masks: Vec<Vec<bool>> = (0..n)
                .map(|k| {
                    let at = self.rng.gen_range(0..s);
                    (0..s)
                        .map(|i| i == at || (k == 0 && i == (at + 1) % s))
                        .collect()
                })
                .collect();
            let labels: Vec<usize> = (0..n).map(|_| self.rng.gen_range(0..3)).collect();
            let inputs = [
                random(&mut self.rng, &[s, d], 1.0),
                random(&mut self.rng, &[d, 3], 1.0),
                random(&mut self.rng, &[3], 0.5),
            ];
            let f = objective(|_, v| Ok(assc_loss(v[0], &masks, &labels, v[1], v[2])?));
            errors.push(self.run(&inputs, &f)?);
        }
        self.record("assc_loss", errors);
        Ok(())
    }
}

/// Checks every component; `inject_fault` perturbs the recorded gradients
/// so that the suite must fail.
pub fn run_gradcheck(seed: u64, inject_fault: bool) -> Result<GradReport, SuiteError> {
    let mut suite = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        bias: if inject_fault { FAULT } else { 0.0 },
        redrawn: 0,
        components: Vec::new(),
    };
    suite.tensor_ops(5)?;
    suite.sem_gnn(5)?;
    suite.contrast(5)?;
    suite.task_loss(Task::Mate, 2)?;
    suite.task_loss(Task::Masc, 2)?;
    suite.assc(5)?;
    Ok(GradReport {
        seed,
        tolerance: TOLERANCE,
        components: suite.components,
    })
}
