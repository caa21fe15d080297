//! Closed-loop runs on a fixed time grid: schedule → noise → virtual layer →
//! controller → plant, recorded into a [`SimTrace`].

use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::TrackingSeries;
use crate::config::{Coupling, SimConfig};
use crate::controller::{adapt_step, AgentController, ControllerDiagnostics};
use crate::design::{self, ChainSpec, DesignInputs, DesignOutput, RiccatiSolution};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::integrate::rk4_step;
use crate::noise::NoiseProcess;
use crate::plant::{check_state, plant_derivative, plant_step, AgentModel};
use crate::rng;
use crate::schedule::{Mode, ModeSchedule, ScheduleCertificate};
use crate::virtual_layer::{check_derivative_bound, lyapunov_ve, LeaderRef, VirtualLayer};

/// Stream id for the initial-state draw.
const INIT_STREAM: u64 = 0x1417;

/// Time-indexed log of a run. Rows are stored flat; see [`SimTrace::header`].
///
/// Columns, in order: `t`, `mode` (1 = ON, 0 = OFF, the mode governing the
/// step that starts at `t`), `z_r`, then per agent `i` (1-based)
/// `eta{i}_{q}`, `zeta{i}_{q}`, `x{i}_{q}` for q = 1..n, `u{i}`,
/// `e{i}_{q}` for q = 1..n, `xi{i}_{k}` for k = 1..m, `theta_norm{i}`,
/// `v{i}` (Σ e²/2), and finally `v_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    header: Vec<String>,
    data: Vec<f64>,
    n_agents: usize,
    order: usize,
    noise_dim: usize,
    pub dt: f64,
    pub divergence: Option<Error>,
}

impl SimTrace {
    fn new(n_agents: usize, order: usize, noise_dim: usize, dt: f64) -> Self {
        let mut header = vec!["t".to_string(), "mode".to_string(), "z_r".to_string()];
        for i in 1..=n_agents {
            for prefix in ["eta", "zeta", "x"] {
                header.extend((1..=order).map(|q| format!("{prefix}{i}_{q}")));
            }
            header.push(format!("u{i}"));
            header.extend((1..=order).map(|q| format!("e{i}_{q}")));
            header.extend((1..=noise_dim).map(|k| format!("xi{i}_{k}")));
            header.push(format!("theta_norm{i}"));
            header.push(format!("v{i}"));
        }
        header.push("v_e".to_string());
        Self { header, data: Vec::new(), n_agents, order, noise_dim, dt, divergence: None }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn ncols(&self) -> usize {
        self.header.len()
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let c = self.ncols();
        &self.data[k * c..(k + 1) * c]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Values of one column, by index.
    pub fn column_at(&self, idx: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.chunks_exact(self.ncols()).map(move |r| r[idx])
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.column_index(name).map(|i| self.column_at(i).collect())
    }

    fn agent_base(&self, agent: usize) -> usize {
        3 + agent * (4 * self.order + self.noise_dim + 3)
    }

    fn agent_col(&self, agent: usize, field: AgentField) -> usize {
        let n = self.order;
        let base = self.agent_base(agent);
        match field {
            AgentField::Eta(q) => base + q,
            AgentField::Zeta(q) => base + n + q,
            AgentField::X(q) => base + 2 * n + q,
            AgentField::U => base + 3 * n,
            AgentField::E(q) => base + 3 * n + 1 + q,
            AgentField::Xi(k) => base + 4 * n + 1 + k,
            AgentField::ThetaNorm => base + 4 * n + 1 + self.noise_dim,
            AgentField::V => base + 4 * n + 2 + self.noise_dim,
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        self.row(k)[0]
    }

    pub fn times(&self) -> Vec<f64> {
        self.column_at(0).collect()
    }

    pub fn mode(&self, k: usize) -> Mode {
        if self.row(k)[1] == 1.0 {
            Mode::On
        } else {
            Mode::Off
        }
    }

    pub fn z_r(&self, k: usize) -> f64 {
        self.row(k)[2]
    }

    pub fn v_e(&self, k: usize) -> f64 {
        self.row(k)[self.ncols() - 1]
    }

    pub fn v_e_series(&self) -> Vec<f64> {
        self.column_at(self.ncols() - 1).collect()
    }

    pub fn get(&self, k: usize, agent: usize, field: AgentField) -> f64 {
        self.row(k)[self.agent_col(agent, field)]
    }

    /// z_i − z_r at row k.
    pub fn tracking_error(&self, k: usize, agent: usize) -> f64 {
        self.get(k, agent, AgentField::X(0)) - self.z_r(k)
    }

    /// η_{i,1} − z_r at row k.
    pub fn virtual_error(&self, k: usize, agent: usize) -> f64 {
        self.get(k, agent, AgentField::Eta(0)) - self.z_r(k)
    }

    /// Reads a trace written by [`Self::write_csv`]; the layout is recovered from the header.
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
        let n_agents = count("u");
        if n_agents == 0 || header.first().map(String::as_str) != Some("t") {
            return Err(Error::Validation("not a trace file".into()));
        }
        let order = count("x1_");
        let noise_dim = count("xi1_");
        let mut trace = Self::new(n_agents, order, noise_dim, 0.0);
        if trace.header != header {
            return Err(Error::Validation("trace header does not match the expected layout".into()));
        }
        for rec in r.records() {
            for v in rec?.iter() {
                trace.data.push(v.parse().map_err(|_| Error::Validation(format!("bad number {v:?} in trace")))?);
            }
        }
        if trace.len() > 1 {
            trace.dt = trace.time(1) - trace.time(0);
        }
        Ok(trace)
    }

    /// Writes the trace as CSV (header plus one row per step).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for k in 0..self.len() {
            w.write_record(self.row(k).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-agent column selector; indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentField {
    Eta(usize),
    Zeta(usize),
    X(usize),
    U,
    E(usize),
    Xi(usize),
    ThetaNorm,
    V,
}

/// Graph spectrum and gain design for a configuration, without any stepping.
#[derive(Debug, Clone)]
pub struct DesignSummary {
    pub graph: Graph,
    pub lambda_min: f64,
    pub inputs: DesignInputs,
    /// `None` when P comes from `design.p_override`.
    pub riccati: Option<RiccatiSolution>,
    pub output: DesignOutput,
}

impl DesignSummary {
    pub fn from_config(cfg: &SimConfig) -> Result<Self> {
        let n = cfg.run.order;
        let graph = cfg.graph.build()?;
        let lambda_min = graph.min_eig_lb()?;
        let inputs = cfg.design.inputs(graph.n_followers());
        inputs.validate()?;
        let spec = ChainSpec::new(n)?;
        let (p, riccati) = match &cfg.design.p_override {
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Validation(format!("p_override must be {n}x{n}")));
                }
                (DMatrix::from_fn(n, n, |r, c| rows[r][c]), None)
            }
            None => {
                let sol = design::solve_p(&spec, inputs.c1, inputs.c3)?;
                (sol.p.clone(), Some(sol))
            }
        };
        let k = design::make_gain(&p, &spec, inputs.c0, lambda_min)?;
        let mut output = design::rates(&p, &inputs)?;
        output.k = k;
        Ok(Self { graph, lambda_min, inputs, riccati, output })
    }

    /// c0·λ_min, which must be at least 1.
    pub fn pinning_product(&self) -> f64 {
        self.inputs.c0 as f64 * self.lambda_min
    }
}

/// Generates the configured schedule and rejects it unless every period is certified.
pub fn certified_schedule(cfg: &SimConfig, design: &DesignOutput) -> Result<(ModeSchedule, ScheduleCertificate)> {
    let schedule = ModeSchedule::generate(&cfg.schedule, design.max_off_ratio, cfg.run.horizon)?;
    let certificate = schedule.certify(design.delta_alpha, design.delta_beta);
    if !certificate.feasible {
        return Err(Error::ScheduleInfeasible { lambda: certificate.lambda });
    }
    Ok((schedule, certificate))
}

/// A validated, ready-to-run experiment. Runs differ only in their noise streams.
pub struct Simulation {
    cfg: SimConfig,
    graph: Graph,
    lambda_min: f64,
    design: DesignOutput,
    riccati: Option<RiccatiSolution>,
    schedule: ModeSchedule,
    certificate: ScheduleCertificate,
    layer: VirtualLayer,
    model: Box<dyn AgentModel>,
    controller: AgentController,
    diagnostics: ControllerDiagnostics,
    x0: Vec<DVector<f64>>,
    eta0: Vec<DVector<f64>>,
}

fn ticks(ratio: f64) -> Option<u64> {
    let r = ratio.round();
    ((ratio - r).abs() <= 1e-9 * r.max(1.0) && r >= 1.0).then_some(r as u64)
}

fn vec_of_vecs(name: &str, rows: &[Vec<f64>], count: usize, len: usize) -> Result<Vec<DVector<f64>>> {
    if rows.len() != count || rows.iter().any(|r| r.len() != len) {
        return Err(Error::Validation(format!("{name} must be {count} vectors of length {len}")));
    }
    Ok(rows.iter().map(|r| DVector::from_column_slice(r)).collect())
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        let run = &cfg.run;
        let n = run.order;
        if !(run.dt > 0.0 && run.dt.is_finite()) {
            return Err(Error::Validation(format!("dt must be > 0, got {}", run.dt)));
        }
        if !(run.horizon >= 0.0 && run.horizon.is_finite()) {
            return Err(Error::Validation(format!("horizon must be >= 0, got {}", run.horizon)));
        }
        let noise = cfg.noise.params();
        noise.validate()?;
        if ticks(noise.correlation_time / run.dt).is_none() {
            return Err(Error::Validation("dt must divide the noise correlation time".into()));
        }
        if cfg.schedule.grid > 0.0 && ticks(cfg.schedule.grid / run.dt).is_none() {
            return Err(Error::Validation("dt must divide the schedule grid".into()));
        }

        let DesignSummary { graph, lambda_min, riccati, output: design_out, .. } = DesignSummary::from_config(&cfg)?;
        let n_agents = graph.n_followers();
        if cfg.noise.seeds.len() != n_agents {
            return Err(Error::Validation(format!("need {n_agents} noise seeds, got {}", cfg.noise.seeds.len())));
        }
        let k = design_out.k.clone();
        let inputs = cfg.design.inputs(n_agents);

        check_derivative_bound(&cfg.leader, n, inputs.c_z, run.horizon, 1e-3)?;

        let (schedule, certificate) = certified_schedule(&cfg, &design_out)?;

        let model = cfg.plant.model.build(n, noise.dim)?;
        let controller = AgentController::new(n, cfg.controller)?;
        let diagnostics = cfg.controller.validate(n)?;

        let x0 = match &cfg.initial.x0 {
            Some(rows) => vec_of_vecs("initial.x0", rows, n_agents, n)?,
            None => {
                let [lo, hi] = cfg.initial.x1_range;
                if !(lo <= hi) {
                    return Err(Error::Validation("initial.x1_range must be ordered".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(rng::derive(run.seed, INIT_STREAM));
                (0..n_agents)
                    .map(|_| {
                        let mut x = DVector::zeros(n);
                        x[0] = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                        x
                    })
                    .collect()
            }
        };
        let eta0 = match &cfg.initial.eta0 {
            Some(rows) => vec_of_vecs("initial.eta0", rows, n_agents, n)?,
            None => vec![DVector::zeros(n); n_agents],
        };

        let layer = VirtualLayer::new(graph.clone(), k);
        Ok(Self {
            cfg,
            graph,
            lambda_min,
            design: design_out,
            riccati,
            schedule,
            certificate,
            layer,
            model,
            controller,
            diagnostics,
            x0,
            eta0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn design(&self) -> &DesignOutput {
        &self.design
    }

    pub fn riccati(&self) -> Option<&RiccatiSolution> {
        self.riccati.as_ref()
    }

    pub fn schedule(&self) -> &ModeSchedule {
        &self.schedule
    }

    pub fn certificate(&self) -> &ScheduleCertificate {
        &self.certificate
    }

    pub fn controller_diagnostics(&self) -> &ControllerDiagnostics {
        &self.diagnostics
    }

    pub fn layer(&self) -> &VirtualLayer {
        &self.layer
    }

    pub fn initial_states(&self) -> &[DVector<f64>] {
        &self.x0
    }

    pub fn steps(&self) -> usize {
        (self.cfg.run.horizon / self.cfg.run.dt).round() as usize
    }

    /// Noise seed of `agent` in ensemble member `run`.
    pub fn noise_seed(&self, agent: usize, run: u64) -> u64 {
        rng::derive(self.cfg.noise.seeds[agent], run)
    }

    /// Mode governing the step `[k·dt, (k+1)·dt)`, looked up at the step midpoint.
    fn step_mode(&self, k: usize) -> Mode {
        let t = (k as f64 + 0.5) * self.cfg.run.dt;
        let p = &self.schedule.periods()[self.schedule.period_index(t)];
        if t < p.tau_off {
            Mode::On
        } else {
            Mode::Off
        }
    }

    pub fn run(&self) -> SimTrace {
        self.run_member(0)
    }

    /// Runs ensemble member `run` (member 0 uses the configured seeds verbatim).
    pub fn run_member(&self, run: u64) -> SimTrace {
        let n_agents = self.graph.n_followers();
        let n = self.cfg.run.order;
        let m = self.cfg.noise.dim;
        let dt = self.cfg.run.dt;
        let mut trace = SimTrace::new(n_agents, n, m, dt);
        let steps = self.steps();
        if steps == 0 {
            return trace;
        }
        let mut noises: Vec<NoiseProcess> = (0..n_agents)
            .map(|i| NoiseProcess::new(self.cfg.noise.params(), self.noise_seed(i, run)).expect("validated noise"))
            .collect();
        let mut state = LoopState {
            x: self.x0.clone(),
            eta: self.eta0.clone(),
            controllers: vec![self.controller.clone(); n_agents],
        };
        let mut row = Vec::with_capacity(trace.ncols());
        for k in 0..=steps {
            let t = k as f64 * dt;
            let mode = self.step_mode(k);
            self.record(&mut trace, &mut row, t, mode, &state, &noises);
            if k == steps {
                break;
            }
            let result = match self.cfg.run.coupling {
                Coupling::StageCoupled => self.step_coupled(&mut state, &mut noises, t, mode),
                Coupling::SampleHold => self.step_held(&mut state, &mut noises, t, mode),
            };
            if let Err(e) = result {
                trace.divergence = Some(match e {
                    Error::Divergence { what, .. } => Error::Divergence { t: t + dt, what },
                    other => other,
                });
                break;
            }
        }
        trace
    }

    fn record(
        &self,
        trace: &mut SimTrace,
        row: &mut Vec<f64>,
        t: f64,
        mode: Mode,
        state: &LoopState,
        noises: &[NoiseProcess],
    ) {
        let n = self.cfg.run.order;
        let zbar = self.cfg.leader.stacked(t, n);
        let zetas = self.layer.zetas(&state.eta, &zbar, mode);
        row.clear();
        row.push(t);
        row.push(if mode == Mode::On { 1.0 } else { 0.0 });
        row.push(zbar[0]);
        for i in 0..state.x.len() {
            let ctrl = &state.controllers[i];
            let eval = ctrl.evaluate(self.model.as_ref(), i, &state.x[i], &state.eta[i]);
            row.extend(state.eta[i].iter());
            row.extend(zetas[i].iter());
            row.extend(state.x[i].iter());
            row.push(eval.u);
            row.extend(eval.e.iter());
            row.extend(noises[i].value().iter());
            row.push(ctrl.weight_norm());
            row.push(0.5 * eval.e.norm_squared());
        }
        row.push(lyapunov_ve(&state.eta, &zbar, &self.design.p));
        trace.data.extend_from_slice(row);
    }

    /// ζ, u, e, φ and ξ evaluated once and held over the step.
    fn step_held(&self, state: &mut LoopState, noises: &mut [NoiseProcess], t: f64, mode: Mode) -> Result<()> {
        let dt = self.cfg.run.dt;
        let n = self.cfg.run.order;
        let zbar = self.cfg.leader.stacked(t, n);
        let zetas = self.layer.zetas(&state.eta, &zbar, mode);
        state.eta = self.layer.virtual_step(&state.eta, &zetas, dt)?;
        for i in 0..state.x.len() {
            let ctrl = &mut state.controllers[i];
            let eval = ctrl.evaluate(self.model.as_ref(), i, &state.x[i], &state.eta[i]);
            let params = *ctrl.params();
            for (q, net) in ctrl.nets.iter_mut().enumerate() {
                adapt_step(net, eval.e[q], &eval.phis[q], dt, &params)?;
            }
            let xi = noises[i].step(dt)?.clone();
            state.x[i] = plant_step(self.model.as_ref(), i, &state.x[i], eval.u, &xi, dt).map_err(|e| relabel(e, i))?;
        }
        Ok(())
    }

    /// Whole closed loop as one ODE, integrated by a single RK4 step.
    fn step_coupled(&self, state: &mut LoopState, noises: &mut [NoiseProcess], t: f64, mode: Mode) -> Result<()> {
        let dt = self.cfg.run.dt;
        let n = self.cfg.run.order;
        let n_agents = state.x.len();
        for p in noises.iter_mut() {
            p.begin_step(dt)?;
        }
        let weights = self.controller.weight_count();
        let stride = 2 * n + weights;
        let sizes: Vec<usize> = self.controller.nets.iter().map(|net| net.len()).collect();

        let mut y = DVector::zeros(n_agents * stride);
        for i in 0..n_agents {
            let base = i * stride;
            y.rows_mut(base, n).copy_from(&state.x[i]);
            y.rows_mut(base + n, n).copy_from(&state.eta[i]);
            let mut off = base + 2 * n;
            for net in &state.controllers[i].nets {
                y.rows_mut(off, net.len()).copy_from(&net.weights);
                off += net.len();
            }
        }

        let params = *self.controller.params();
        let model = self.model.as_ref();
        let rhs = |s: f64, y: &DVector<f64>| -> DVector<f64> {
            let zbar = self.cfg.leader.stacked(t + s, n);
            let etas: Vec<DVector<f64>> = (0..n_agents).map(|i| DVector::from(y.rows(i * stride + n, n))).collect();
            let mut dy = DVector::zeros(y.len());
            for i in 0..n_agents {
                let base = i * stride;
                let x = DVector::from(y.rows(base, n));
                let zeta = self.layer.zeta(i, &etas, &zbar, mode);
                dy.rows_mut(base + n, n).copy_from(&self.layer.eta_derivative(&etas[i], &zeta));

                let mut slices = Vec::with_capacity(n);
                let mut off = base + 2 * n;
                for &len in &sizes {
                    slices.push(&y.as_slice()[off..off + len]);
                    off += len;
                }
                let eval = self.controller.evaluate_with(&slices, model, i, &x, &etas[i]);
                let xi = noises[i].value_after(s);
                dy.rows_mut(base, n).copy_from(&plant_derivative(model, i, &x, eval.u, &xi));

                let mut off = base + 2 * n;
                // γ(e·φ − σ·θ̂), written in place
                for (q, &len) in sizes.iter().enumerate() {
                    let (e, phi, w) = (eval.e[q], &eval.phis[q], slices[q]);
                    let out = &mut dy.as_mut_slice()[off..off + len];
                    for j in 0..len {
                        out[j] = params.gamma * (e * phi[j] - params.sigma * w[j]);
                    }
                    off += len;
                }
            }
            dy
        };
        let y = rk4_step(&y, dt, rhs);

        for p in noises.iter_mut() {
            p.advance(dt);
        }
        for i in 0..n_agents {
            let base = i * stride;
            let x = DVector::from(y.rows(base, n));
            check_state(&x, i, t + dt)?;
            let eta = DVector::from(y.rows(base + n, n));
            if !eta.iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence { t: t + dt, what: format!("virtual state of agent {i}") });
            }
            state.x[i] = x;
            state.eta[i] = eta;
            let mut off = base + 2 * n;
            for net in state.controllers[i].nets.iter_mut() {
                let w = y.rows(off, net.len());
                if !w.iter().all(|v| v.is_finite()) {
                    return Err(Error::Divergence { t: t + dt, what: format!("adaptive weights of agent {i}") });
                }
                net.weights.copy_from(&w);
                off += net.len();
            }
        }
        Ok(())
    }

    /// Integrates the auxiliary systems alone (no plants or controllers) and
    /// returns V_e on the grid `k·dt`, k = 0..=steps.
    pub fn run_virtual_layer(&self) -> Result<Vec<f64>> {
        let n = self.cfg.run.order;
        let n_agents = self.eta0.len();
        let dt = self.cfg.run.dt;
        let steps = self.steps();
        let p = &self.design.p;
        let mut y = DVector::zeros(n_agents * n);
        for (i, eta) in self.eta0.iter().enumerate() {
            y.rows_mut(i * n, n).copy_from(eta);
        }
        let unstack = |y: &DVector<f64>| -> Vec<DVector<f64>> {
            (0..n_agents).map(|i| DVector::from(y.rows(i * n, n))).collect()
        };
        let mut v_e = Vec::with_capacity(steps + 1);
        v_e.push(lyapunov_ve(&self.eta0, &self.cfg.leader.stacked(0.0, n), p));
        for k in 0..steps {
            let t = k as f64 * dt;
            let mode = self.step_mode(k);
            y = rk4_step(&y, dt, |s, y| {
                let zbar = self.cfg.leader.stacked(t + s, n);
                let etas = unstack(y);
                let mut dy = DVector::zeros(y.len());
                for i in 0..n_agents {
                    let zeta = self.layer.zeta(i, &etas, &zbar, mode);
                    dy.rows_mut(i * n, n).copy_from(&self.layer.eta_derivative(&etas[i], &zeta));
                }
                dy
            });
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence { t: t + dt, what: "virtual layer".into() });
            }
            v_e.push(lyapunov_ve(&unstack(&y), &self.cfg.leader.stacked(t + dt, n), p));
        }
        Ok(v_e)
    }

    /// Runs ensemble members `members` and maps each trace through `f`.
    pub fn map_members<T, F>(&self, members: Range<u64>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64, SimTrace) -> T + Sync,
    {
        members.into_par_iter().map(|r| f(r, self.run_member(r))).collect()
    }
}

fn relabel(e: Error, agent: usize) -> Error {
    match e {
        Error::Divergence { t, what } => Error::Divergence { t, what: format!("{what} (agent {agent})") },
        other => other,
    }
}

#[derive(Clone)]
struct LoopState {
    x: Vec<DVector<f64>>,
    eta: Vec<DVector<f64>>,
    controllers: Vec<AgentController>,
}

/// Validates `cfg` and runs it once with the configured seeds.
pub fn run(cfg: &SimConfig) -> Result<SimTrace> {
    Ok(Simulation::new(cfg.clone())?.run())
}

/// Ensemble members 0..runs (independent noise streams) plus summary statistics.
pub struct EnsembleResult {
    pub traces: Vec<SimTrace>,
    pub summary: EnsembleSummary,
}

/// Cross-run statistics over the shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub runs: usize,
    pub diverged: usize,
    pub times: Vec<f64>,
    /// E_p(max_i |z_i − z_r|) per grid time, over non-diverged runs.
    pub mean_abs_error: Vec<f64>,
    /// Per-agent E_p(|z_i − z_r|) per grid time.
    pub mean_abs_error_agent: Vec<Vec<f64>>,
}

impl EnsembleSummary {
    pub fn from_traces(traces: &[SimTrace]) -> Self {
        let series: Vec<TrackingSeries> = traces.iter().map(TrackingSeries::from).collect();
        Self::from_series(&series)
    }

    pub fn from_series(series: &[TrackingSeries]) -> Self {
        let ok: Vec<&TrackingSeries> = series.iter().filter(|s| !s.diverged).collect();
        let len = ok.iter().map(|s| s.times.len()).min().unwrap_or(0);
        let n_agents = series.first().map(TrackingSeries::n_agents).unwrap_or(0);
        let times = ok.first().map(|s| s.times[..len].to_vec()).unwrap_or_default();
        let denom = ok.len().max(1) as f64;
        let mut mean_abs_error = vec![0.0; len];
        let mut per_agent = vec![vec![0.0; len]; n_agents];
        for s in &ok {
            for k in 0..len {
                let mut worst = 0.0f64;
                for (i, agent) in per_agent.iter_mut().enumerate() {
                    let e = s.abs_error[i][k];
                    agent[k] += e / denom;
                    worst = worst.max(e);
                }
                mean_abs_error[k] += worst / denom;
            }
        }
        Self {
            runs: series.len(),
            diverged: series.len() - ok.len(),
            times,
            mean_abs_error,
            mean_abs_error_agent: per_agent,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "mean_max_abs_error".to_string()];
        header.extend((1..=self.mean_abs_error_agent.len()).map(|i| format!("mean_abs_error{i}")));
        w.write_record(&header)?;
        for k in 0..self.times.len() {
            let mut rec = vec![self.times[k].to_string(), self.mean_abs_error[k].to_string()];
            rec.extend(self.mean_abs_error_agent.iter().map(|s| s[k].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn run_ensemble(cfg: &SimConfig, runs: usize) -> Result<EnsembleResult> {
    if runs == 0 {
        return Err(Error::Validation("ensemble needs at least one run".into()));
    }
    let sim = Simulation::new(cfg.clone())?;
    let traces = sim.map_members(0..runs as u64, |_, t| t);
    let summary = EnsembleSummary::from_traces(&traces);
    Ok(EnsembleResult { traces, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_cfg() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.run.horizon = 0.5;
        cfg
    }

    #[test]
    fn trace_shape_and_header() {
        let trace = run(&short_cfg()).unwrap();
        assert_eq!(trace.len(), 501);
        assert_eq!(trace.ncols(), 3 + 4 * 12 + 1);
        assert_eq!(&trace.header()[..6], &["t", "mode", "z_r", "eta1_1", "eta1_2", "zeta1_1"]);
        assert_eq!(trace.column_index("x2_1"), Some(trace.agent_col(1, AgentField::X(0))));
        assert_eq!(trace.column_index("xi4_1"), Some(trace.agent_col(3, AgentField::Xi(0))));
        assert_eq!(trace.column_index("v3"), Some(trace.agent_col(2, AgentField::V)));
        assert!(trace.divergence.is_none());
    }

    #[test]
    fn zero_horizon_gives_empty_trace() {
        let mut cfg = short_cfg();
        cfg.run.horizon = 0.0;
        let trace = run(&cfg).unwrap();
        assert!(trace.is_empty());
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn rejects_inconsistent_config() {
        let mut cfg = short_cfg();
        cfg.run.dt = 3e-3;
        assert!(Simulation::new(cfg).is_err());
        let mut cfg = short_cfg();
        cfg.noise.seeds.pop();
        assert!(Simulation::new(cfg).is_err());
        let mut cfg = short_cfg();
        cfg.schedule.off_fraction = 1.2;
        assert!(Simulation::new(cfg).is_err());
        let mut cfg = short_cfg();
        cfg.design.c0 = 1;
        assert!(matches!(Simulation::new(cfg), Err(Error::PinningCondition { .. })));
    }

    #[test]
    fn sample_hold_coupling_runs() {
        let mut cfg = short_cfg();
        cfg.run.coupling = Coupling::SampleHold;
        let trace = run(&cfg).unwrap();
        assert_eq!(trace.len(), 501);
        assert!(trace.divergence.is_none());
    }

    #[test]
    fn mode_column_follows_schedule() {
        let mut cfg = SimConfig::default();
        cfg.run.horizon = 5.0;
        let sim = Simulation::new(cfg).unwrap();
        let trace = sim.run();
        for k in (0..trace.len() - 1).step_by(7) {
            let t = trace.time(k) + 0.5e-3;
            assert_eq!(trace.mode(k), sim.schedule().mode_at(t).unwrap());
        }
    }
}
