//! Co-integration of plant and observer with agent join/leave events.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EventSpec, GainsSpec, InitialEstimates, ScenarioConfig};
use super::integrate::{rk4_step, Rk4Workspace};
use super::signals::InputSignal;
use super::trace::{norm, EventRecord, Sample, Segment, SimulationTrace};
use crate::error::{Error, Result};
use crate::graphs::{self, DirectedGraph};
use crate::mas::{self, CouplingMap, EdgeSpec, MasModel};
use crate::observer::{self, ErrorLayout, GainReport, InputMode, Observer, ObserverGains};
use crate::scalar::{Extended, Scalar};

/// Plant, gains and observer state between events.
#[derive(Debug, Clone)]
pub struct NetworkState {
    pub model: MasModel,
    pub gains: ObserverGains,
    /// Persistent one-based label of every agent index.
    pub labels: Vec<usize>,
    pub inputs: Vec<InputSignal>,
    pub x: Vec<Extended>,
    /// Flat observer state.
    pub observer: Vec<Extended>,
}

/// Strong connectivity of `G_c` and both structural assumptions.
pub fn check_configuration(model: &MasModel) -> Result<()> {
    if !graphs::is_strongly_connected(model.gc()) {
        return Err(Error::Connectivity("communication graph is not strongly connected".into()));
    }
    model.check_assumptions().map(|_| ())
}

fn graph_by_labels(labels: &[usize], specs: &[EdgeSpec]) -> Result<DirectedGraph> {
    let index = |l: usize| {
        labels
            .iter()
            .position(|&x| x == l)
            .ok_or_else(|| Error::Parse(format!("no agent with label {l}")))
    };
    let edges = specs
        .iter()
        .map(|e| {
            let (s, d, w) = e.zero_based()?;
            Ok((index(s + 1)?, index(d + 1)?, w))
        })
        .collect::<Result<Vec<_>>>()?;
    DirectedGraph::from_weighted_edges(labels.len(), &edges)
}

/// Gains after a network change: Luenberger gains carried over, weights
/// recomputed from the new `G_c`, `μ` kept unless the policy depends on the
/// topology.
fn reconfigure(
    model: &MasModel,
    luenberger: Vec<DMatrix<f64>>,
    mu: f64,
    spec: &GainsSpec,
    mode: InputMode,
) -> Result<(ObserverGains, Option<GainReport>)> {
    if spec.policy.depends_on_topology() {
        let (g, r) = observer::design_gains(model, spec.policy, Some(luenberger), spec.margin(), mode)?;
        Ok((g, Some(r)))
    } else {
        let g = ObserverGains::from_rule(model, luenberger, mu, spec.policy.rule(), 1.0, mode)?;
        Ok((g, None))
    }
}

/// Copies estimates between agent sets; `map[new] = Some(old)` keeps an
/// agent, `None` starts it at zero.
fn remap_observer(old: &Observer, new: &Observer, map: &[Option<usize>], state: &[Extended]) -> Vec<Extended> {
    let mut out = vec![Extended::zero(); new.state_len()];
    let m = map.len();
    for j in 0..m {
        let Some(oj) = map[j] else { continue };
        let d = new.model().agent(j).state_dim();
        for i in 0..m {
            if let Some(oi) = map[i] {
                let (src, dst) = (old.xhat_offset(oi, oj), new.xhat_offset(i, j));
                out[dst..dst + d].copy_from_slice(&state[src..src + d]);
            }
        }
        let (src, dst) = (old.xbar_offset(oj), new.xbar_offset(j));
        out[dst..dst + d].copy_from_slice(&state[src..src + d]);
    }
    out
}

impl NetworkState {
    /// Applies one join or leave. New estimates start at zero; surviving
    /// estimates are kept. Fails if the new network breaks strong
    /// connectivity or either structural assumption.
    pub fn apply_event(
        &self,
        event: &EventSpec,
        spec: &GainsSpec,
        next_label: usize,
    ) -> Result<(NetworkState, Option<GainReport>, String)> {
        let old_obs = Observer::new(&self.model, &self.gains)?;
        let mode = self.gains.input_mode;
        match event {
            EventSpec::Leave { agent, communication, .. } => {
                let k = self
                    .labels
                    .iter()
                    .position(|&l| l == *agent)
                    .ok_or_else(|| Error::Parse(format!("no agent with label {agent} to remove")))?;
                let mut model = self.model.remove_agent(k)?;
                let mut labels = self.labels.clone();
                labels.remove(k);
                if let Some(specs) = communication {
                    model = model.with_gc(graph_by_labels(&labels, specs)?)?;
                }
                check_configuration(&model)?;
                let mut f = self.gains.luenberger.clone();
                f.remove(k);
                let (gains, report) = reconfigure(&model, f, self.gains.mu, spec, mode)?;
                let new_obs = Observer::new(&model, &gains)?;
                let map: Vec<Option<usize>> = (0..labels.len()).map(|i| Some(if i < k { i } else { i + 1 })).collect();
                let observer = remap_observer(&old_obs, &new_obs, &map, &self.observer);
                let so = self.model.state_offsets();
                let mut x = self.x[..so[k]].to_vec();
                x.extend_from_slice(&self.x[so[k + 1]..]);
                let mut inputs = self.inputs.clone();
                inputs.remove(k);
                let state = NetworkState { model, gains, labels, inputs, x, observer };
                Ok((state, report, format!("agent {agent} left")))
            }
            EventSpec::Join {
                agent,
                x0,
                state_couplings,
                output_couplings,
                communication,
                luenberger,
                input,
                ..
            } => {
                let blocks = agent.blocks(&format!("joining agent {next_label}"))?;
                if x0.len() != blocks.state_dim() {
                    return Err(Error::Dimension(format!(
                        "joining agent has state dimension {}, x0 has length {}",
                        blocks.state_dim(),
                        x0.len()
                    )));
                }
                let mut labels = self.labels.clone();
                labels.push(next_label);
                let index = |l: usize| {
                    labels
                        .iter()
                        .position(|&x| x == l)
                        .ok_or_else(|| Error::Parse(format!("no agent with label {l}")))
                };
                let dims: Vec<usize> = self
                    .model
                    .state_dims()
                    .into_iter()
                    .chain([blocks.state_dim()])
                    .collect();
                let mut sc = CouplingMap::new();
                for c in state_couplings {
                    let (i, j) = (index(c.i)?, index(c.j)?);
                    sc.insert((i, j), mas::matrix_with_cols(&c.a_ij, dims[j], "A_ij")?);
                }
                let mut oc = CouplingMap::new();
                for c in output_couplings {
                    let (i, j) = (index(c.i)?, index(c.j)?);
                    oc.insert((i, j), mas::matrix_with_cols(&c.c_ij, dims[j], "C_ij")?);
                }
                let gc = graph_by_labels(&labels, communication)?;
                let f_new = match luenberger {
                    Some(rows) => mas::matrix_with_cols(rows, blocks.output_dim(), "F of the joining agent")?,
                    None => observer::design_luenberger_gain(&blocks.a, &blocks.c, spec.margin())?,
                };
                let signal = input.clone().unwrap_or(InputSignal::Zero);
                signal.validate(blocks.input_dim())?;
                let model = self.model.add_agent(blocks, sc, oc, gc)?;
                check_configuration(&model)?;
                let mut f = self.gains.luenberger.clone();
                f.push(f_new);
                let (gains, report) = reconfigure(&model, f, self.gains.mu, spec, mode)?;
                let new_obs = Observer::new(&model, &gains)?;
                let old_m = self.labels.len();
                let map: Vec<Option<usize>> = (0..=old_m).map(|i| (i < old_m).then_some(i)).collect();
                let observer = remap_observer(&old_obs, &new_obs, &map, &self.observer);
                let mut x = self.x.clone();
                x.extend(x0.iter().map(|&v| Extended::from_f64(v)));
                let mut inputs = self.inputs.clone();
                inputs.push(signal);
                let state = NetworkState { model, gains, labels, inputs, x, observer };
                Ok((state, report, format!("agent {next_label} joined")))
            }
        }
    }
}

struct Runner {
    state: NetworkState,
    observer: Observer,
    ws: Rk4Workspace<Extended>,
    u: Vec<f64>,
    u_ext: Vec<Extended>,
    y: Vec<Extended>,
    w: Vec<Extended>,
    v: Vec<Extended>,
    input_sup: f64,
}

impl Runner {
    fn new(state: NetworkState) -> Result<Self> {
        let observer = Observer::new(&state.model, &state.gains)?;
        let mut r = Self {
            state,
            observer,
            ws: Rk4Workspace::new(0),
            u: Vec::new(),
            u_ext: Vec::new(),
            y: Vec::new(),
            w: Vec::new(),
            v: Vec::new(),
            input_sup: 0.0,
        };
        r.resize();
        Ok(r)
    }

    fn resize(&mut self) {
        let model = &self.state.model;
        self.u = vec![0.0; model.total_input_dim()];
        self.u_ext = vec![Extended::zero(); model.total_input_dim()];
        self.y = vec![Extended::zero(); model.total_output_dim()];
        self.w = vec![Extended::zero(); model.total_state_dim()];
        self.v = vec![Extended::zero(); model.total_output_dim()];
    }

    fn draw_noise(&mut self, rng: &mut ChaCha8Rng, bw: f64, bv: f64) -> f64 {
        let mut sq = 0.0;
        for (buf, b) in [(&mut self.w, bw), (&mut self.v, bv)] {
            for e in buf.iter_mut() {
                let val = if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 };
                sq += val * val;
                *e = Extended::from_f64(val);
            }
        }
        sq.sqrt()
    }

    fn step(&mut self, t: f64, dt: f64) -> Result<()> {
        let model = &self.state.model;
        let n = model.total_state_dim();
        let io = model.input_offsets();
        let mut z: Vec<Extended> = self.state.x.iter().chain(&self.state.observer).copied().collect();
        let (u, u_ext, y, w, v) = (&mut self.u, &mut self.u_ext, &mut self.y, &self.w, &self.v);
        let inputs = &self.state.inputs;
        let observer = &self.observer;
        let mut sup = self.input_sup;
        let mut f = |t: f64, z: &[Extended], out: &mut [Extended]| {
            for (i, s) in inputs.iter().enumerate() {
                s.eval_into(t, &mut u[io[i]..io[i + 1]]);
            }
            sup = sup.max(norm(u));
            for (e, &val) in u_ext.iter_mut().zip(u.iter()) {
                *e = Extended::from_f64(val);
            }
            let (x, obs) = z.split_at(n);
            let (dx, dobs) = out.split_at_mut(n);
            model.plant_derivative_into(x, u_ext, dx);
            for (d, &wi) in dx.iter_mut().zip(w) {
                *d = *d + wi;
            }
            model.plant_output_into(x, y);
            for (yi, &vi) in y.iter_mut().zip(v) {
                *yi = *yi + vi;
            }
            observer.derivative_into(obs, u_ext, y, dobs);
        };
        rk4_step(&mut f, &mut z, t, dt, &mut self.ws)?;
        self.input_sup = sup;
        self.state.observer.copy_from_slice(&z[n..]);
        self.state.x.copy_from_slice(&z[..n]);
        Ok(())
    }
}

fn record(trace: &mut SimulationTrace, runner: &Runner, t: f64) {
    let segment = trace.segments.len() - 1;
    let seg = &trace.segments[segment];
    let errors = seg.layout.errors_from_state(&runner.observer, &runner.state.x, &runner.state.observer);
    trace.samples.push(Sample {
        t,
        segment,
        x: runner.state.x.clone(),
        observer: runner.state.observer.clone(),
        errors,
    });
}

fn new_segment(state: &NetworkState, observer: &Observer, report: Option<GainReport>, t: f64) -> Segment {
    Segment {
        start_time: t,
        labels: state.labels.clone(),
        observer: observer.clone(),
        report,
        layout: ErrorLayout::new(&state.model, (0..state.model.agent_count()).collect()),
    }
}

/// Initial network: plant, designed gains, signals and initial states.
pub fn initial_state(cfg: &ScenarioConfig) -> Result<(NetworkState, GainReport)> {
    cfg.validate_timing()?;
    let model = cfg.build_model()?;
    check_configuration(&model)?;
    let (gains, report) = cfg.design_gains(&model)?;
    let inputs = cfg.input_signals(&model)?;
    let x0 = cfg.initial_state(&model)?;
    let obs = Observer::new(&model, &gains)?;
    let m = model.agent_count();
    let so = model.state_offsets();
    let mut observer = vec![0.0; obs.state_len()];
    if cfg.initial_estimates == InitialEstimates::Truth {
        for j in 0..m {
            let xj = &x0[so[j]..so[j + 1]];
            for i in 0..m {
                let o = obs.xhat_offset(i, j);
                observer[o..o + xj.len()].copy_from_slice(xj);
            }
            let o = obs.xbar_offset(j);
            observer[o..o + xj.len()].copy_from_slice(xj);
        }
    }
    let state = NetworkState {
        labels: (1..=m).collect(),
        model,
        gains,
        inputs,
        x: x0.iter().map(|&v| Extended::from_f64(v)).collect(),
        observer: observer.iter().map(|&v| Extended::from_f64(v)).collect(),
    };
    Ok((state, report))
}

/// Runs a scenario on the grid `k dt`, `k = 0..=round(t_end / dt)`, in
/// double-double precision. Noise is drawn once per step from a ChaCha8
/// stream seeded with `cfg.seed`; events are applied at the nearest grid time
/// and followed by an extra sample at that time.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimulationTrace> {
    let (state, report) = initial_state(cfg)?;
    let dt = cfg.dt;
    let steps = (cfg.t_end / dt).round() as usize;
    if ((steps as f64) * dt - cfg.t_end).abs() > 1e-6 * dt {
        return Err(Error::Domain(format!("t_end = {} is not a multiple of dt = {dt}", cfg.t_end)));
    }
    let mut event_steps = Vec::with_capacity(cfg.events.len());
    for ev in &cfg.events {
        let k = (ev.time() / dt).round() as usize;
        if k == 0 || k >= steps {
            return Err(Error::Domain(format!("event at t = {} falls outside the grid", ev.time())));
        }
        event_steps.push(k);
    }
    let mut runner = Runner::new(state)?;
    let mut next_label = runner.state.labels.len() + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = SimulationTrace {
        config: cfg.clone(),
        samples: Vec::new(),
        segments: vec![new_segment(&runner.state, &runner.observer, Some(report), 0.0)],
        events: Vec::new(),
        input_sup: 0.0,
        noise_sup: 0.0,
    };
    record(&mut trace, &runner, 0.0);
    let mut next_event = 0;
    for k in 0..steps {
        let t = k as f64 * dt;
        while next_event < cfg.events.len() && event_steps[next_event] == k {
            let ev = &cfg.events[next_event];
            let (state, report, description) = runner.state.apply_event(ev, &cfg.gains, next_label)?;
            if matches!(ev, EventSpec::Join { .. }) {
                next_label += 1;
            }
            runner = Runner {
                input_sup: runner.input_sup,
                ..Runner::new(state)?
            };
            trace.events.push(EventRecord {
                requested_time: ev.time(),
                applied_time: t,
                step: k,
                snap: (t - ev.time()).abs(),
                description,
            });
            trace.segments.push(new_segment(&runner.state, &runner.observer, report, t));
            record(&mut trace, &runner, t);
            next_event += 1;
        }
        let noise = runner.draw_noise(&mut rng, cfg.noise.process, cfg.noise.measurement);
        trace.noise_sup = trace.noise_sup.max(noise);
        runner.step(t, dt)?;
        if (k + 1) % cfg.subsample == 0 || k + 1 == steps {
            record(&mut trace, &runner, (k + 1) as f64 * dt);
        }
    }
    trace.input_sup = runner.input_sup;
    Ok(trace)
}
