//! Fixed-step closed-loop simulation with a timed event schedule.
//!
//! The state vector is packed as
//! `[q (4), ω (3), η (n), η̇ (n), v (r), ζ (r·n_mu, column-major), R̂ (p), z (2n)]`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::analysis::lyapunov::{auxiliary_rhs, initial_z, solve_lyapunov_pair, LyapunovEvaluator, LyapunovValues};
use crate::controller::{evaluate, ControllerKnowledge, Gains};
use crate::error::{dim, invalid, Error, Result};
use crate::exosystem::{exosystem_state, ExosystemStructure, FrequencySpec};
use crate::internal_model::{
    compensator_rhs, internal_model_rhs, synthesize, true_r, ControllerState, DesignConfig, InternalModelDesign,
};
use crate::plant::{plant_rhs, DisturbanceModel, InertiaParameterization, PlantState, SpacecraftParams};
use crate::quat::{normalize, Quaternion};

/// A single parameter switch applied between integration steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Change {
    /// Sets the frequency of tone `tone` on body axis `axis` (both 1-based).
    SetDisturbanceFrequency { axis: usize, tone: usize, value: f64 },
    /// Sets the true value of unknown inertia parameter `index` (1-based).
    SetInertiaParameter { index: usize, value: f64 },
    EnableAdaptation,
    DisableAdaptation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub changes: Vec<Change>,
}

/// Certificate scalars used for the telemetry Lyapunov columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub p: f64,
    pub s: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { p: 1.0, s: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub t_final: f64,
    pub dt: f64,
    /// Telemetry is written every `decimate` steps.
    pub decimate: usize,
    pub q_desired: Quaternion,
    pub initial: PlantState,
    pub spacecraft: SpacecraftParams,
    pub inertia: InertiaParameterization,
    pub disturbance: DisturbanceModel,
    /// `unknown_tones[axis][tone]` marks frequencies the controller does not know.
    pub unknown_tones: [Vec<bool>; 3],
    pub design: DesignConfig,
    pub gains: Gains,
    /// σ and μ that `R̂` is pinned to while adaptation is disabled.
    pub assumed_sigma: Vec<f64>,
    pub assumed_mu: DVector<f64>,
    /// `R̂(0)` when adaptation starts enabled (default zero).
    pub initial_r_hat: Option<DVector<f64>>,
    pub events: Vec<Event>,
    /// Lyapunov telemetry; `None` leaves the V columns empty.
    pub analysis: Option<AnalysisConfig>,
}

/// The true plant and controller switches in force between two events.
#[derive(Debug, Clone)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub spacecraft: SpacecraftParams,
    pub inertia: InertiaParameterization,
    pub disturbance: DisturbanceModel,
    pub adaptation_enabled: bool,
    /// True unknown frequencies.
    pub sigma: Vec<f64>,
    /// Set when adaptation is switched off at the start of this segment.
    pub repin: bool,
}

impl Scenario {
    pub fn structure(&self) -> Result<ExosystemStructure> {
        ExosystemStructure::from_model(&self.disturbance, &self.unknown_tones)
    }

    pub fn n_mu(&self) -> usize {
        self.inertia.n_mu()
    }

    pub fn synthesize(&self) -> Result<InternalModelDesign> {
        synthesize(&self.structure()?, &self.design)
    }

    /// Checks every invariant and returns the piecewise-constant truth.
    pub fn segments(&self) -> Result<Vec<Segment>> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt must be positive"));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(invalid("t_final must be nonnegative"));
        }
        if self.decimate == 0 {
            return Err(invalid("decimate must be at least 1"));
        }
        if !self.q_desired.is_unit(1e-9) || !self.initial.q.is_unit(1e-9) {
            return Err(invalid("initial and desired quaternions must be unit"));
        }
        self.gains.validate()?;
        self.disturbance.validate()?;
        let n = self.spacecraft.modes();
        if self.initial.eta.len() != n || self.initial.eta_dot.len() != n {
            return Err(dim(format!("initial modal state must have {n} entries")));
        }
        let j = self.inertia.inertia();
        if (j - self.spacecraft.inertia).amax() > 1e-12 * self.spacecraft.inertia.amax().max(1.0) {
            return Err(Error::Configuration(
                "inertia parameterization does not reproduce J".into(),
            ));
        }
        let structure = self.structure()?;
        let n_sigma = structure.n_sigma();
        if self.assumed_sigma.len() != n_sigma || self.assumed_mu.len() != self.n_mu() {
            return Err(dim(format!(
                "assumed values need {n_sigma} frequencies and {} inertia parameters",
                self.n_mu()
            )));
        }
        let mut prev = 0.0;
        for (i, e) in self.events.iter().enumerate() {
            if !(e.time > prev || (i == 0 && e.time > 0.0)) || !(e.time < self.t_final) {
                return Err(invalid(format!(
                    "event {} at t = {}: times must be strictly increasing, positive and below t_final",
                    i + 1,
                    e.time
                )));
            }
            prev = e.time;
        }

        let mut segs = Vec::with_capacity(self.events.len() + 1);
        let mut cur = Segment {
            start: 0.0,
            end: self.t_final,
            spacecraft: self.spacecraft.clone(),
            inertia: self.inertia.clone(),
            disturbance: self.disturbance.clone(),
            adaptation_enabled: self.gains.adaptation_enabled,
            sigma: structure.sigma_of(&self.disturbance),
            repin: false,
        };
        for e in &self.events {
            let mut next = cur.clone();
            next.start = e.time;
            next.repin = false;
            let mut mu = next.inertia.mu_true.clone();
            for ch in &e.changes {
                match *ch {
                    Change::SetDisturbanceFrequency { axis, tone, value } => {
                        let spec = structure
                            .axes
                            .get(axis.wrapping_sub(1))
                            .and_then(|a| a.tones.get(tone.wrapping_sub(1)))
                            .ok_or_else(|| invalid(format!("event at {}: no tone {tone} on axis {axis}", e.time)))?;
                        if !matches!(spec, FrequencySpec::Unknown(_)) {
                            return Err(invalid(format!(
                                "event at {}: axis {axis} tone {tone} is a known frequency and cannot change",
                                e.time
                            )));
                        }
                        next.disturbance.axes[axis - 1].tones[tone - 1].frequency = value;
                    }
                    Change::SetInertiaParameter { index, value } => {
                        if index == 0 || index > mu.len() {
                            return Err(invalid(format!(
                                "event at {}: inertia parameter {index} does not exist",
                                e.time
                            )));
                        }
                        mu[index - 1] = value;
                    }
                    Change::EnableAdaptation => next.adaptation_enabled = true,
                    Change::DisableAdaptation => {
                        next.adaptation_enabled = false;
                        next.repin = true;
                    }
                }
            }
            next.disturbance.validate().map_err(|err| invalid(format!("event at {}: {err}", e.time)))?;
            next.inertia = next.inertia.with_mu(mu)?;
            next.spacecraft = next
                .spacecraft
                .with_inertia(next.inertia.inertia())
                .map_err(|err| Error::Configuration(format!("event at {}: {err}", e.time)))?;
            next.sigma = structure.sigma_of(&next.disturbance);
            cur.end = e.time;
            segs.push(cur);
            cur = next;
        }
        cur.end = self.t_final;
        segs.push(cur);
        Ok(segs)
    }
}

/// Sizes that fix the packed state layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n: usize,
    pub r: usize,
    pub n_mu: usize,
    pub p: usize,
}

impl Layout {
    pub fn new(design: &InternalModelDesign, modes: usize, n_mu: usize) -> Self {
        Layout {
            n: modes,
            r: design.r(),
            n_mu,
            p: design.r_hat_len(n_mu),
        }
    }

    pub fn len(&self) -> usize {
        4 + 3 + 2 * self.n + self.r + self.r * self.n_mu + self.p + 2 * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn offsets(&self) -> [usize; 8] {
        let mut o = [0; 8];
        let sizes = [4, 3, self.n, self.n, self.r, self.r * self.n_mu, self.p, 2 * self.n];
        for i in 1..8 {
            o[i] = o[i - 1] + sizes[i - 1];
        }
        o
    }
}

/// Plant, controller and auxiliary states together.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopState {
    pub plant: PlantState,
    pub controller: ControllerState,
    pub z: DVector<f64>,
}

impl ClosedLoopState {
    pub fn pack(&self, layout: &Layout) -> DVector<f64> {
        let o = layout.offsets();
        let mut x = DVector::zeros(layout.len());
        x.rows_mut(o[0], 4).copy_from(&self.plant.q.to_vector4());
        x.rows_mut(o[1], 3).copy_from(&self.plant.omega);
        x.rows_mut(o[2], layout.n).copy_from(&self.plant.eta);
        x.rows_mut(o[3], layout.n).copy_from(&self.plant.eta_dot);
        x.rows_mut(o[4], layout.r).copy_from(&self.controller.v);
        x.rows_mut(o[5], layout.r * layout.n_mu)
            .copy_from_slice(self.controller.zeta.as_slice());
        x.rows_mut(o[6], layout.p).copy_from(&self.controller.r_hat);
        x.rows_mut(o[7], 2 * layout.n).copy_from(&self.z);
        x
    }

    pub fn unpack(x: &DVector<f64>, layout: &Layout) -> Result<Self> {
        if x.len() != layout.len() {
            return Err(dim(format!("state has {} entries, layout needs {}", x.len(), layout.len())));
        }
        let o = layout.offsets();
        let seg = |i: usize, len: usize| DVector::from_column_slice(&x.as_slice()[o[i]..o[i] + len]);
        Ok(ClosedLoopState {
            plant: PlantState {
                q: Quaternion::from_parts(Vector3::new(x[0], x[1], x[2]), x[3]),
                omega: Vector3::new(x[o[1]], x[o[1] + 1], x[o[1] + 2]),
                eta: seg(2, layout.n),
                eta_dot: seg(3, layout.n),
            },
            controller: ControllerState {
                v: seg(4, layout.r),
                zeta: DMatrix::from_column_slice(layout.r, layout.n_mu, &x.as_slice()[o[5]..o[5] + layout.r * layout.n_mu]),
                r_hat: seg(6, layout.p),
            },
            z: seg(7, 2 * layout.n),
        })
    }
}

/// Everything `closed_loop_rhs` reads: the true plant of the current
/// segment plus the fixed controller.
pub struct RhsContext<'a> {
    pub segment: &'a Segment,
    pub design: &'a InternalModelDesign,
    pub knowledge: &'a ControllerKnowledge,
    pub gains: Gains,
    pub q_desired: Quaternion,
    pub layout: Layout,
}

/// Instantaneous torque and disturbance, recorded alongside the state.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsOutput {
    pub derivative: DVector<f64>,
    pub u: Vector3<f64>,
    pub d: Vector3<f64>,
}

/// Derivative of the packed closed-loop state.
pub fn closed_loop_rhs(state: &ClosedLoopState, t: f64, ctx: &RhsContext) -> Result<RhsOutput> {
    let layout = &ctx.layout;
    let seg = ctx.segment;
    // RK4 stage values are not exactly unit, so the unchecked form is used
    let q_e = state.plant.q.error_from(&ctx.q_desired);
    let omega_e = state.plant.omega;
    let ctrl = evaluate(&q_e.qv, &omega_e, &state.controller, ctx.design, ctx.knowledge, &ctx.gains)?;
    let d = seg.disturbance.eval(t);
    let pd = plant_rhs(&state.plant, &ctrl.u, &d, &seg.spacecraft);
    let v_dot = internal_model_rhs(&state.controller.v, &ctrl.u, &omega_e, ctx.design, &ctx.knowledge.inertia);
    let zeta_dot = compensator_rhs(&state.controller.zeta, &omega_e, ctx.design, &ctx.knowledge.inertia);
    let z_dot = auxiliary_rhs(&state.z, &omega_e, &seg.spacecraft)?;

    let o = layout.offsets();
    let mut x = DVector::zeros(layout.len());
    x.rows_mut(o[0], 4).copy_from(&pd.q_dot);
    x.rows_mut(o[1], 3).copy_from(&pd.omega_dot);
    x.rows_mut(o[2], layout.n).copy_from(&pd.eta_dot);
    x.rows_mut(o[3], layout.n).copy_from(&pd.eta_ddot);
    x.rows_mut(o[4], layout.r).copy_from(&v_dot);
    x.rows_mut(o[5], layout.r * layout.n_mu).copy_from_slice(zeta_dot.as_slice());
    x.rows_mut(o[6], layout.p).copy_from(&ctrl.r_hat_dot);
    x.rows_mut(o[7], 2 * layout.n).copy_from(&z_dot);
    Ok(RhsOutput {
        derivative: x,
        u: ctrl.u,
        d,
    })
}

/// One classical Runge-Kutta step. A non-finite stage derivative aborts
/// with the time at which it appeared.
pub fn rk4_step<F>(mut rhs: F, x: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(dt > 0.0) {
        return Err(invalid("step size must be positive"));
    }
    let mut stage = |tt: f64, xx: &DVector<f64>| -> Result<DVector<f64>> {
        let k = rhs(tt, xx)?;
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { t: tt });
        }
        Ok(k)
    };
    let h2 = 0.5 * dt;
    let k1 = stage(t, x)?;
    let k2 = stage(t + h2, &(x + &k1 * h2))?;
    let k3 = stage(t + h2, &(x + &k2 * h2))?;
    let k4 = stage(t + dt, &(x + &k3 * dt))?;
    let out = x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { t: t + dt });
    }
    Ok(out)
}

/// One telemetry row.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    pub t: f64,
    pub q_e: [f64; 4],
    pub omega_e: Vector3<f64>,
    pub eta: DVector<f64>,
    pub eta_dot: DVector<f64>,
    pub v: DVector<f64>,
    pub zeta: DMatrix<f64>,
    pub r_hat: DVector<f64>,
    pub u: Vector3<f64>,
    pub d: Vector3<f64>,
    pub z: DVector<f64>,
    pub lyapunov: Option<LyapunovValues>,
}

impl TelemetryRecord {
    pub fn q_ev_norm(&self) -> f64 {
        Vector3::new(self.q_e[0], self.q_e[1], self.q_e[2]).norm()
    }

    pub fn controller(&self) -> ControllerState {
        ControllerState {
            v: self.v.clone(),
            zeta: self.zeta.clone(),
            r_hat: self.r_hat.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub layout: Layout,
    pub records: Vec<TelemetryRecord>,
    /// Largest `|‖q‖ − 1|` seen after a step and before renormalization.
    pub max_quat_drift: f64,
    pub steps: usize,
}

impl Trajectory {
    /// Records with `t0 ≤ t ≤ t1`.
    pub fn window(&self, t0: f64, t1: f64) -> impl Iterator<Item = &TelemetryRecord> {
        self.records.iter().filter(move |r| r.t >= t0 && r.t <= t1)
    }
}

fn pinned_r_hat(sc: &Scenario, design: &InternalModelDesign) -> DVector<f64> {
    true_r(&sc.assumed_sigma, &sc.assumed_mu, &design.basis)
}

/// Integrates the scenario with a freshly synthesized design.
pub fn run_scenario(sc: &Scenario) -> Result<Trajectory> {
    let design = sc.synthesize()?;
    run_scenario_with_design(sc, &design)
}

/// Initial closed-loop state for a scenario and design.
pub fn initial_state(sc: &Scenario, design: &InternalModelDesign) -> Result<ClosedLoopState> {
    let n_mu = sc.n_mu();
    let mut controller = ControllerState::zeros(design, n_mu);
    controller.r_hat = if sc.gains.adaptation_enabled {
        match &sc.initial_r_hat {
            Some(r) => r.clone(),
            None => controller.r_hat,
        }
    } else {
        pinned_r_hat(sc, design)
    };
    design.check_controller_state(&controller, n_mu)?;
    Ok(ClosedLoopState {
        plant: sc.initial.clone(),
        z: initial_z(&sc.initial, &sc.spacecraft)?,
        controller,
    })
}

/// Rejects a design whose exosystem structure differs from the scenario's.
pub fn check_design(sc: &Scenario, design: &InternalModelDesign) -> Result<()> {
    let structure = sc.structure()?;
    if structure.orders() != design.structure.orders() || structure.n_sigma() != design.n_sigma() {
        return Err(dim("design does not match the scenario disturbance structure"));
    }
    Ok(())
}

fn lyapunov_for(
    sc: &Scenario,
    seg: &Segment,
    design: &InternalModelDesign,
    cfg: &AnalysisConfig,
) -> Result<LyapunovEvaluator> {
    let (p, s) = solve_lyapunov_pair(&seg.spacecraft, design, cfg.p, cfg.s)?;
    LyapunovEvaluator::new(p, s, design, &seg.spacecraft, &seg.inertia, &seg.sigma, sc.gains.k1, sc.gains.k)
}

/// Re-evaluates `V` for every record of a trajectory, using the truth of the
/// segment that was in force when the record was taken.
pub fn lyapunov_series(
    traj: &Trajectory,
    sc: &Scenario,
    design: &InternalModelDesign,
    cfg: &AnalysisConfig,
) -> Result<Vec<LyapunovValues>> {
    let segments = sc.segments()?;
    check_design(sc, design)?;
    let orders = design.structure.orders();
    let evaluators = segments
        .iter()
        .map(|seg| lyapunov_for(sc, seg, design, cfg))
        .collect::<Result<Vec<_>>>()?;
    traj.records
        .iter()
        .map(|r| {
            let si = segments.iter().rposition(|seg| seg.start <= r.t).unwrap_or(0);
            let q_e = Quaternion::from_array(r.q_e);
            let varrho = exosystem_state(&segments[si].disturbance, &orders, r.t)?;
            Ok(evaluators[si].eval(&q_e, &r.omega_e, &r.eta_dot, &r.controller(), &r.z, &varrho))
        })
        .collect()
}

/// Integrates the scenario with a given (possibly replayed) design.
pub fn run_scenario_with_design(sc: &Scenario, design: &InternalModelDesign) -> Result<Trajectory> {
    let segments = sc.segments()?;
    check_design(sc, design)?;
    let knowledge = ControllerKnowledge::new(&sc.spacecraft, &sc.inertia);
    let layout = Layout::new(design, sc.spacecraft.modes(), sc.n_mu());
    let orders = design.structure.orders();

    let mut state = initial_state(sc, design)?;
    let mut x = state.pack(&layout);
    let mut records = Vec::new();
    let mut max_drift = 0.0f64;
    let mut steps = 0usize;
    let mut pending = false;

    for (si, seg) in segments.iter().enumerate() {
        let gains = Gains {
            adaptation_enabled: seg.adaptation_enabled,
            ..sc.gains
        };
        if seg.repin {
            state.controller.r_hat = pinned_r_hat(sc, design);
            x = state.pack(&layout);
        }
        let ctx = RhsContext {
            segment: seg,
            design,
            knowledge: &knowledge,
            gains,
            q_desired: sc.q_desired,
            layout,
        };
        let lyap = match &sc.analysis {
            Some(cfg) => Some(lyapunov_for(sc, seg, design, cfg)?),
            None => None,
        };
        let record = |t: f64, st: &ClosedLoopState| -> Result<TelemetryRecord> {
            let out = closed_loop_rhs(st, t, &ctx)?;
            let q_e = st.plant.q.error_from(&sc.q_desired);
            let lyapunov = match &lyap {
                Some(ev) => {
                    let varrho = exosystem_state(&seg.disturbance, &orders, t)?;
                    Some(ev.eval(&q_e, &st.plant.omega, &st.plant.eta_dot, &st.controller, &st.z, &varrho))
                }
                None => None,
            };
            Ok(TelemetryRecord {
                t,
                q_e: q_e.to_array(),
                omega_e: st.plant.omega,
                eta: st.plant.eta.clone(),
                eta_dot: st.plant.eta_dot.clone(),
                v: st.controller.v.clone(),
                zeta: st.controller.zeta.clone(),
                r_hat: st.controller.r_hat.clone(),
                u: out.u,
                d: out.d,
                z: st.z.clone(),
                lyapunov,
            })
        };
        // an event time is recorded with the post-event parameters
        if si == 0 || pending {
            records.push(record(seg.start, &state)?);
        }

        let span = seg.end - seg.start;
        let n_steps = if span > 0.0 {
            ((span / sc.dt) * (1.0 - 1e-12)).ceil() as usize
        } else {
            0
        };
        for k in 0..n_steps {
            let t = seg.start + k as f64 * sc.dt;
            let t_next = if k + 1 == n_steps {
                seg.end
            } else {
                seg.start + (k + 1) as f64 * sc.dt
            };
            let h = t_next - t;
            let rhs = |tt: f64, xx: &DVector<f64>| -> Result<DVector<f64>> {
                let st = ClosedLoopState::unpack(xx, &layout)?;
                Ok(closed_loop_rhs(&st, tt, &ctx)?.derivative)
            };
            let mut xn = rk4_step(rhs, &x, t, h)?;
            let q = Quaternion::from_parts(Vector3::new(xn[0], xn[1], xn[2]), xn[3]);
            max_drift = max_drift.max((q.norm_squared().sqrt() - 1.0).abs());
            let qn = normalize(&q).map_err(|_| Error::Diverged { t: t_next })?;
            xn.rows_mut(0, 4).copy_from(&qn.to_vector4());
            x = xn;
            steps += 1;
            let last = si + 1 == segments.len() && k + 1 == n_steps;
            if (steps.is_multiple_of(sc.decimate) && k + 1 < n_steps) || last {
                state = ClosedLoopState::unpack(&x, &layout)?;
                records.push(record(t_next, &state)?);
            }
        }
        state = ClosedLoopState::unpack(&x, &layout)?;
        pending = si + 1 < segments.len() && n_steps > 0 && steps.is_multiple_of(sc.decimate);
    }
    Ok(Trajectory {
        layout,
        records,
        max_quat_drift: max_drift,
        steps,
    })
}

/// Column headers for a layout, in write order.
pub fn csv_header(layout: &Layout) -> Vec<String> {
    let mut h: Vec<String> = vec!["t".into()];
    h.extend((1..=4).map(|i| format!("qe{i}")));
    h.extend((1..=3).map(|i| format!("we{i}")));
    h.extend((1..=layout.n).map(|i| format!("eta{i}")));
    h.extend((1..=layout.n).map(|i| format!("etadot{i}")));
    h.extend((1..=layout.r).map(|i| format!("v{i}")));
    for j in 1..=layout.n_mu {
        h.extend((1..=layout.r).map(|i| format!("zeta{i}_{j}")));
    }
    h.extend((1..=layout.p).map(|i| format!("Rhat{i}")));
    h.extend((1..=3).map(|i| format!("u{i}")));
    h.extend((1..=3).map(|i| format!("d{i}")));
    h.extend((1..=2 * layout.n).map(|i| format!("z{i}")));
    h.extend(["V", "V1", "V2", "V3"].iter().map(|s| s.to_string()));
    h
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes telemetry as CSV with `\n` line endings. Lyapunov columns are
/// left empty when they were not computed.
pub fn write_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(csv_header(&traj.layout))?;
    for r in &traj.records {
        let mut row: Vec<String> = vec![fmt(r.t)];
        row.extend(r.q_e.iter().map(|&x| fmt(x)));
        row.extend(r.omega_e.iter().map(|&x| fmt(x)));
        row.extend(r.eta.iter().map(|&x| fmt(x)));
        row.extend(r.eta_dot.iter().map(|&x| fmt(x)));
        row.extend(r.v.iter().map(|&x| fmt(x)));
        row.extend(r.zeta.iter().map(|&x| fmt(x)));
        row.extend(r.r_hat.iter().map(|&x| fmt(x)));
        row.extend(r.u.iter().map(|&x| fmt(x)));
        row.extend(r.d.iter().map(|&x| fmt(x)));
        row.extend(r.z.iter().map(|&x| fmt(x)));
        match &r.lyapunov {
            Some(l) => row.extend([l.v, l.v1, l.v2, l.v3].iter().map(|&x| fmt(x))),
            None => row.extend(std::iter::repeat_n(String::new(), 4)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn count_prefixed(header: &csv::StringRecord, prefix: &str) -> usize {
    header
        .iter()
        .filter(|h| {
            h.strip_prefix(prefix)
                .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
        })
        .count()
}

/// Reads telemetry written by [`write_csv`]; the layout is recovered from
/// the header.
pub fn read_csv<R: Read>(input: R) -> Result<Trajectory> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers()?.clone();
    let n = count_prefixed(&header, "eta");
    let r = count_prefixed(&header, "v");
    let p = count_prefixed(&header, "Rhat");
    let n_zeta = header.iter().filter(|h| h.starts_with("zeta")).count();
    let n_mu = n_zeta.checked_div(r).unwrap_or(0);
    let layout = Layout { n, r, n_mu, p };
    if csv_header(&layout).iter().map(String::as_str).ne(header.iter()) {
        return Err(Error::Schema("telemetry header does not match any known layout".into()));
    }
    let mut records = Vec::new();
    for (line, row) in rd.records().enumerate() {
        let row = row?;
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Schema(format!("row {}: bad number '{s}'", line + 1)))
        };
        let body = 1 + layout.len() + 6;
        let mut vals = Vec::with_capacity(body);
        for f in row.iter().take(body) {
            vals.push(parse(f)?);
        }
        if vals.len() != body {
            return Err(Error::Schema(format!("row {} is short", line + 1)));
        }
        let lyap: Vec<&str> = row.iter().skip(body).collect();
        let lyapunov = if lyap.iter().all(|s| s.is_empty()) {
            None
        } else {
            let v: Vec<f64> = lyap.iter().map(|s| parse(s)).collect::<Result<_>>()?;
            Some(LyapunovValues {
                v: v[0],
                v1: v[1],
                v2: v[2],
                v3: v[3],
            })
        };
        let mut it = vals.into_iter();
        let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
        let t = take(1)[0];
        let q = take(4);
        let w = take(3);
        let eta = DVector::from_vec(take(n));
        let eta_dot = DVector::from_vec(take(n));
        let v = DVector::from_vec(take(r));
        let zeta = DMatrix::from_vec(r, n_mu, take(r * n_mu));
        let r_hat = DVector::from_vec(take(p));
        let u = take(3);
        let d = take(3);
        let z = DVector::from_vec(take(2 * n));
        records.push(TelemetryRecord {
            t,
            q_e: [q[0], q[1], q[2], q[3]],
            omega_e: Vector3::new(w[0], w[1], w[2]),
            eta,
            eta_dot,
            v,
            zeta,
            r_hat,
            u: Vector3::new(u[0], u[1], u[2]),
            d: Vector3::new(d[0], d[1], d[2]),
            z,
            lyapunov,
        });
    }
    Ok(Trajectory {
        layout,
        records,
        max_quat_drift: f64::NAN,
        steps: 0,
    })
}
