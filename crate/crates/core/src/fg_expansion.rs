//! Order-by-order reconstruction of the even asymptotic expansion
//!
//!   h_x = h0 + x^2 h2 + ... + x^n (h_n + k log x) + ...
//!
//! for a conformally compact Einstein metric g = x^{-2}(dx^2 + h_x) with
//! prescribed boundary metric h0. The driver is the first-order system for
//! A_x = h_x^{-1} d_x h_x:
//!
//!   x d_x A + (1 - n + x Tr A / 2) A = 2 x h_x^{-1} Ric(h_x) + Tr A Id   (flow)
//!   d_x Tr A + |A|^2 / 2 = Tr A / x                                      (trace)
//!   delta_{h_x}(d_x h_x) = -d Tr A                                       (divergence)
//!
//! Each stage m reads off the x^{m-1} coefficient of the flow equation with
//! the unknown slot set to zero, then inverts the resulting linear map on
//! endomorphisms. At m = n that map degenerates: the trace-free part of h_n
//! is free Neumann data, the log coefficient k absorbs the solvability
//! defect, and the divergence equation pins delta(h_n) through a potential
//! solve. Everything downstream (volume coefficients, obstruction tensor,
//! anomaly linearization) is read off the solved series.

use crate::chart_geometry::{ChartMetric, Geometry};
use crate::fields::{EndoField, OneFormField, ScalarField, SymTensorField};
use crate::smat;
use crate::xseries::{raise_product, XEndoSeries, XScalarSeries, XSeries, XSeriesTensor};
use crate::{Error, Result};

/// Sup norms of the constraint equations evaluated on the solved series.
#[derive(Debug, Clone)]
pub struct FGResiduals {
    /// sup |Tr_{h0} k| for the log coefficient (zero when no log activates).
    pub trace_constraint: f64,
    /// sup |delta_{h0} k|.
    pub div_constraint: f64,
    /// Entry m is the sup over the chart of the largest residual among the
    /// three expansion equations at order x^{m-1} (flow) / x^{m-2} (trace) /
    /// x^{m-1} (divergence). Index 0 is unused.
    pub einstein_residual_by_order: Vec<f64>,
}

/// A solved boundary expansion.
#[derive(Debug, Clone)]
pub struct FGExpansion {
    pub h0: ChartMetric,
    /// Coefficient series: slot m holds h_m, the log slot at m = n holds k.
    pub coeffs: XSeriesTensor,
    /// Prescribed trace-free Neumann part, when one was supplied.
    pub neumann: Option<SymTensorField>,
    /// The order-n log coefficient k (zero field when the slot is inactive).
    pub obstruction: SymTensorField,
    /// Relative volume element series sqrt(det h_x / det h0) = 1 + v_2 x^2 + ...
    pub volume: XScalarSeries,
    pub residuals: FGResiduals,
}

impl FGExpansion {
    pub fn coefficient(&self, m: usize) -> Option<&SymTensorField> {
        self.coeffs.get(m)
    }

    /// v_m as a field on the chart (zero when the slot is empty).
    pub fn volume_coefficient(&self, m: usize) -> ScalarField {
        self.volume.at(m)
    }

    /// Boundary dimension n of the expansion.
    pub fn boundary_dim(&self) -> usize {
        self.coeffs.n
    }
}

/// Solve the expansion through x^order (order in [n, n+2]).
///
/// `neumann` prescribes h_n; its trace and divergence must match the values
/// the constraint equations determine (checked to 1e-6 relative). When it is
/// omitted, h_n is the pure-constraint representative with vanishing
/// trace-free transverse part.
pub fn solve_fg(
    h0: &ChartMetric,
    neumann: Option<&SymTensorField>,
    order: usize,
) -> Result<FGExpansion> {
    let n = h0.dim();
    if order < n {
        return Err(Error::Config(format!(
            "expansion order {order} stops before the Neumann order n = {n}"
        )));
    }
    if order > n + 2 {
        return Err(Error::Config(format!(
            "expansion order {order} exceeds x^{} and would need double-log bookkeeping",
            n + 2
        )));
    }
    if let Some(lambda) = h0.model_lambda() {
        if neumann.is_some() {
            return Err(Error::Config(
                "curvature models carry their canonical expansion; sample the metric on a \
                 chart to prescribe Neumann data"
                    .into(),
            ));
        }
        return Ok(model_expansion(h0, lambda, order));
    }
    solve_fg_grid(h0, neumann, order)
}

/// The log coefficient of the expansion of `h0`, trace- and divergence-free
/// up to discretization error; identically zero on Einstein and conformally
/// flat boundaries.
pub fn obstruction(h0: &ChartMetric) -> Result<SymTensorField> {
    let n = h0.dim();
    if n % 2 != 0 {
        return Err(Error::Domain(format!(
            "odd boundary dimension {n} has no log term in the expansion"
        )));
    }
    Ok(solve_fg(h0, None, n)?.obstruction)
}

// ---------------------------------------------------------------------------
// exact expansion of constant-curvature models

fn model_expansion(h0: &ChartMetric, lambda: f64, order: usize) -> FGExpansion {
    let grid = h0.grid();
    let n = h0.dim();
    let g0 = h0.components();
    let mut coeffs: XSeriesTensor = XSeries::new(&grid, n, order);
    coeffs.set(0, g0.clone());
    // h_x = (1 - lambda x^2 / 4)^2 h0 exactly, for every n.
    if order >= 2 {
        let mut h2 = g0.clone();
        h2.scale(-lambda / 2.0);
        coeffs.set(2, h2);
    }
    if order >= 4 {
        let mut h4 = g0.clone();
        h4.scale(lambda * lambda / 16.0);
        coeffs.set(4, h4);
    }
    // v = sqrt(det h_x / det h0) = (1 - lambda x^2/4)^n.
    let mut volume: XScalarSeries = XSeries::new(&grid, n, order);
    let mut binom = 1.0;
    for j in 0..=order / 2 {
        volume.set(2 * j, ScalarField::constant(&grid, binom));
        binom *= (n as f64 - j as f64) / (j + 1) as f64 * (-lambda / 4.0);
    }
    FGExpansion {
        h0: h0.clone(),
        coeffs,
        neumann: None,
        obstruction: SymTensorField::zeros(&grid),
        volume,
        residuals: FGResiduals {
            trace_constraint: 0.0,
            div_constraint: 0.0,
            einstein_residual_by_order: vec![0.0; order + 1],
        },
    }
}

// ---------------------------------------------------------------------------
// series curvature: Christoffel symbols, Ricci, and the divergence equation
// for a truncated x-series metric, one x-power at a time

/// Christoffel symbols of h_x as an x-series: slot s holds Gamma^k_{ij} with
/// the upper index enumerating `Vec` entries and (i, j) packed symmetrically.
struct GammaSeries {
    coeff: Vec<Option<Vec<SymTensorField>>>,
    log: Vec<Option<Vec<SymTensorField>>>,
}

impl GammaSeries {
    fn slot(&self, s: usize, log: bool) -> Option<&Vec<SymTensorField>> {
        if log { self.log[s].as_ref() } else { self.coeff[s].as_ref() }
    }
}

/// Iterate occupied slot pairs (s = j + k <= top) of two slotted families,
/// dispatching on which factor carries the log. A log-log pair inside the
/// truncation is a structural error.
fn product_pairs(
    a_occ: &dyn Fn(usize, bool) -> bool,
    b_occ: &dyn Fn(usize, bool) -> bool,
    top: usize,
    mut emit: impl FnMut(usize, usize, usize, bool, bool) -> Result<()>,
) -> Result<()> {
    for s in 0..=top {
        for j in 0..=s {
            let k = s - j;
            for (al, bl) in [(false, false), (true, false), (false, true), (true, true)] {
                if a_occ(j, al) && b_occ(k, bl) {
                    if al && bl {
                        return Err(Error::Invariant(format!(
                            "log^2 term at x^{s} inside the truncation"
                        )));
                    }
                    emit(s, j, k, al, bl)?;
                }
            }
        }
    }
    Ok(())
}

fn gamma_series(h: &XSeriesTensor, hinv: &XSeriesTensor, top: usize) -> Result<GammaSeries> {
    let grid = &h.grid;
    let n = grid.dim();
    let len = grid.len();
    let mut gam = GammaSeries { coeff: vec![None; top + 1], log: vec![None; top + 1] };
    // Outer loop over derivative slots so each D_l batch is built once.
    for b in 0..=top {
        for b_log in [false, true] {
            let hb = if b_log { h.get_log(b) } else { h.get(b) };
            let Some(hb) = hb else { continue };
            let dh: Vec<SymTensorField> = (0..n).map(|a| hb.derivative(a)).collect();
            // D_l(i,j) = d_i h_{jl} + d_j h_{il} - d_l h_{ij}
            let d_l: Vec<SymTensorField> = (0..n)
                .map(|l| {
                    let mut out = SymTensorField::zeros(grid);
                    for i in 0..n {
                        for j in i..n {
                            let c = smat::sym_idx(n, i, j);
                            let di = dh[i].comp(j, l);
                            let dj = dh[j].comp(i, l);
                            let dl = dh[l].comp(i, j);
                            let dst = &mut out.comps[c];
                            for p in 0..len {
                                dst[p] = di[p] + dj[p] - dl[p];
                            }
                        }
                    }
                    out
                })
                .collect();
            for a in 0..=top - b {
                for a_log in [false, true] {
                    let ia = if a_log { hinv.get_log(a) } else { hinv.get(a) };
                    let Some(ia) = ia else { continue };
                    if a_log && b_log {
                        return Err(Error::Invariant(format!(
                            "log^2 term at x^{} inside the truncation",
                            a + b
                        )));
                    }
                    let target =
                        if a_log || b_log { &mut gam.log[a + b] } else { &mut gam.coeff[a + b] };
                    let acc = target
                        .get_or_insert_with(|| vec![SymTensorField::zeros(grid); n]);
                    for k in 0..n {
                        for l in 0..n {
                            let w = ia.comp(k, l);
                            for c in 0..acc[k].comps.len() {
                                let src = &d_l[l].comps[c];
                                let dst = &mut acc[k].comps[c];
                                for p in 0..len {
                                    dst[p] += 0.5 * w[p] * src[p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gam)
}

/// Contraction c_k = Gamma^i_{ik} of one Christoffel slot.
fn gamma_contraction(gam_slot: &[SymTensorField], n: usize) -> OneFormField {
    let grid = &gam_slot[0].grid;
    let mut c = OneFormField::zeros(grid);
    for k in 0..n {
        for i in 0..n {
            let src = gam_slot[i].comp(i, k);
            let dst = &mut c.comps[k];
            for p in 0..src.len() {
                dst[p] += src[p];
            }
        }
    }
    c
}

/// Ricci tensor of the series metric through x^top:
/// Ric_{jk} = d_i Gamma^i_{jk} - d_j Gamma^i_{ik}
///          + Gamma^i_{im} Gamma^m_{jk} - Gamma^i_{jm} Gamma^m_{ik}.
fn ricci_series(gam: &GammaSeries, grid_n: usize, top: usize) -> Result<XSeriesTensor> {
    let any = gam
        .coeff
        .iter()
        .flatten()
        .next()
        .or_else(|| gam.log.iter().flatten().next())
        .expect("base Christoffel slot");
    let grid = any[0].grid.clone();
    let n = grid_n;
    let len = grid.len();
    let mut ric: XSeriesTensor = XSeries::new(&grid, n, top);

    // Linear (derivative) terms, slot by slot.
    for s in 0..=top {
        for is_log in [false, true] {
            let Some(gs) = gam.slot(s, is_log) else { continue };
            let mut term = SymTensorField::zeros(&grid);
            for i in 0..n {
                term.axpy(1.0, &gs[i].derivative(i));
            }
            let c = gamma_contraction(gs, n);
            // subtract the symmetrized gradient of the contraction
            let mut dc = vec![vec![0.0f64; len]; n * n];
            for k in 0..n {
                let ck = ScalarField { grid: grid.clone(), data: c.comps[k].clone() };
                for j in 0..n {
                    dc[j * n + k] = ck.derivative(j).data;
                }
            }
            for j in 0..n {
                for k in j..n {
                    let idx = smat::sym_idx(n, j, k);
                    let dst = &mut term.comps[idx];
                    let a = &dc[j * n + k];
                    let b = &dc[k * n + j];
                    for p in 0..len {
                        dst[p] -= 0.5 * (a[p] + b[p]);
                    }
                }
            }
            let target = if is_log { &mut ric.logs[s] } else { &mut ric.coeffs[s] };
            match target {
                Some(t) => t.axpy(1.0, &term),
                slot => *slot = Some(term),
            }
        }
    }

    // Quadratic terms via the slot convolution.
    let a_occ = |s: usize, l: bool| gam.slot(s, l).is_some();
    let mut bufu = vec![[0.0f64; smat::MAX_FULL]; n];
    let mut bufv = vec![[0.0f64; smat::MAX_FULL]; n];
    product_pairs(&a_occ, &a_occ, top, |s, u, v, ul, vl| {
        let gu = gam.slot(u, ul).unwrap();
        let gv = gam.slot(v, vl).unwrap();
        let cu = gamma_contraction(gu, n);
        let mut term = SymTensorField::zeros(&grid);
        let mut cvals = vec![0.0f64; n];
        for p in 0..len {
            for m in 0..n {
                cvals[m] = cu.comps[m][p];
                gu[m].at(p, &mut bufu[m]);
                gv[m].at(p, &mut bufv[m]);
            }
            for j in 0..n {
                for k in j..n {
                    let mut acc = 0.0;
                    for m in 0..n {
                        // + c_m Gamma^m_{jk}
                        acc += cvals[m] * bufv[m][j * n + k];
                        // - Gamma^i_{jm} Gamma^m_{ik}
                        for i in 0..n {
                            acc -= bufu[i][j * n + m] * bufv[m][i * n + k];
                        }
                    }
                    term.comps[smat::sym_idx(n, j, k)][p] = acc;
                }
            }
        }
        let target = if ul || vl { &mut ric.logs[s] } else { &mut ric.coeffs[s] };
        match target {
            Some(t) => t.axpy(1.0, &term),
            slot => *slot = Some(term),
        }
        Ok(())
    })?;
    Ok(ric)
}

/// Left-hand side of the flow equation as a series:
/// E = x d_x A + (1 - n + x Tr A / 2) A - 2 x h^{-1} Ric(h) - Tr A Id.
/// The series vanishes termwise exactly when the expansion satisfies the
/// Einstein flow at each solved order. `ric` must be computed through
/// h.order - 2.
fn einstein_flow_series(
    n: usize,
    h: &XSeriesTensor,
    hinv: &XSeriesTensor,
    ric: &XSeriesTensor,
) -> Result<XEndoSeries> {
    let a = raise_product(hinv, &h.d_dx()?)?;
    let ta = a.trace_series();
    let mut e = a.d_dx()?.shift_x(1)?;
    e.add_scaled_series(1.0 - n as f64, &a)?;
    e.add_scaled_series(0.5, &a.mul_scalar(&ta)?.shift_x(1)?)?;
    let mut id0: XEndoSeries = XSeries::new(&h.grid, n, ta.order);
    id0.set(0, EndoField::identity(&h.grid));
    e.add_scaled_series(-1.0, &id0.mul_scalar(&ta)?)?;
    e.add_scaled_series(-2.0, &raise_product(hinv, ric)?.shift_x(1)?)?;
    Ok(e)
}

/// Trace equation residual series: d_x Tr A + Tr(A^2)/2 - x^{-1} Tr A.
fn trace_flow_series(a: &XEndoSeries) -> Result<XScalarSeries> {
    let ta = a.trace_series();
    let mut e = ta.d_dx()?;
    e.add_scaled_series(0.5, &a.mul(a)?.trace_series())?;
    e.add_scaled_series(-1.0, &ta.shift_x(-1)?)?;
    Ok(e)
}

/// One slot of the divergence equation
/// delta_{h_x}(d_x h_x) + d Tr A = -nabla_a A^a_j + d_j Tr A,
/// returned as (coefficient part, log part).
fn divergence_flow_slot(
    gam: &GammaSeries,
    a: &XEndoSeries,
    ta: &XScalarSeries,
    slot: usize,
) -> Result<(OneFormField, OneFormField)> {
    let grid = &a.grid;
    let n = grid.dim();
    let len = grid.len();
    let mut out = OneFormField::zeros(grid);
    let mut out_log = OneFormField::zeros(grid);

    // -d_a A^a_j and +d_j Tr A are linear in the slot.
    for is_log in [false, true] {
        let target = if is_log { &mut out_log } else { &mut out };
        let av = if is_log { a.get_log(slot) } else { a.get(slot) };
        if let Some(av) = av {
            for jj in 0..n {
                for aa in 0..n {
                    let lane =
                        ScalarField { grid: grid.clone(), data: av.comps[aa * n + jj].clone() };
                    let d = lane.derivative(aa);
                    for p in 0..len {
                        target.comps[jj][p] -= d.data[p];
                    }
                }
            }
        }
        let tv = if is_log { ta.get_log(slot) } else { ta.get(slot) };
        if let Some(tv) = tv {
            let g = tv.gradient_forms();
            target.axpy(1.0, &g);
        }
    }

    // Connection terms: -c_m A^m_j + Gamma^m_{aj} A^a_m, convolved over slots.
    let gam_occ = |s: usize, l: bool| s < gam.coeff.len() && gam.slot(s, l).is_some();
    let a_occ = |s: usize, l: bool| {
        s <= a.order && if l { a.get_log(s).is_some() } else { a.get(s).is_some() }
    };
    let mut gbuf = vec![[0.0f64; smat::MAX_FULL]; n];
    product_pairs(&gam_occ, &a_occ, slot, |s, u, v, ul, vl| {
        if s != slot {
            return Ok(());
        }
        let gu = gam.slot(u, ul).unwrap();
        let av = if vl { a.get_log(v) } else { a.get(v) }.unwrap();
        let cu = gamma_contraction(gu, n);
        let target = if ul || vl { &mut out_log } else { &mut out };
        for p in 0..len {
            for m in 0..n {
                gu[m].at(p, &mut gbuf[m]);
            }
            for jj in 0..n {
                let mut acc = 0.0;
                for m in 0..n {
                    acc -= cu.comps[m][p] * av.comps[m * n + jj][p];
                    for aa in 0..n {
                        acc += gbuf[m][aa * n + jj] * av.comps[aa * n + m][p];
                    }
                }
                target.comps[jj][p] += acc;
            }
        }
        Ok(())
    })?;
    Ok((out, out_log))
}

// ---------------------------------------------------------------------------
// the stage-by-stage solver

fn sym_scale_pointwise(t: &SymTensorField, s: &ScalarField) -> SymTensorField {
    let mut out = t.clone();
    for c in out.comps.iter_mut() {
        for (p, v) in c.iter_mut().enumerate() {
            *v *= s.data[p];
        }
    }
    out
}

fn endo_add_diag(e: &mut EndoField, s: &ScalarField, alpha: f64) {
    let n = e.dim;
    for i in 0..n {
        let dst = &mut e.comps[i * n + i];
        for (p, v) in dst.iter_mut().enumerate() {
            *v += alpha * s.data[p];
        }
    }
}

fn solve_fg_grid(
    h0: &ChartMetric,
    neumann: Option<&SymTensorField>,
    order: usize,
) -> Result<FGExpansion> {
    let geo = Geometry::new(h0)?;
    let grid = h0.grid();
    let n = h0.dim();
    let nf = n as f64;
    let g0 = h0.components();

    // Working series with two slots of headroom so every x d_x / shift stays
    // inside the truncation.
    let mut h: XSeriesTensor = XSeries::new(&grid, n, order + 2);
    h.set(0, g0.clone());

    // Size of the source terms, used to scale activation thresholds.
    let curv_scale = {
        let hinv0 = h.truncate(0).metric_inverse()?;
        let gam0 = gamma_series(&h.truncate(0), &hinv0, 0)?;
        let ric0 = ricci_series(&gam0, n, 0)?;
        1.0 + ric0.at(0).sup_norm() + g0.sup_norm()
    };

    let mut obstruction_field = SymTensorField::zeros(&grid);
    let mut trace_constraint = 0.0f64;
    let mut div_constraint = 0.0f64;

    for m in 2..=order {
        if n % 2 == 0 && m % 2 == 1 {
            continue;
        }
        let mf = m as f64;
        let hv = h.truncate(m);
        let hinv = hv.metric_inverse()?;
        let gam = gamma_series(&hv, &hinv, m.saturating_sub(2))?;
        let ric = ricci_series(&gam, n, m.saturating_sub(2))?;
        let e = einstein_flow_series(n, &hv, &hinv, &ric)?;
        let r = e.at(m - 1);
        let r_log = e.at_log(m - 1);

        let denom_tf = mf * (mf - nf);
        let denom_tr = mf * (mf - 2.0 * nf);

        if m == n {
            // Log forcing: the coefficient equation m(m-n) K - m TrK Id = -R
            // collapses, so the defect of -n TrH Id = -R feeds the log slot.
            if r_log.sup_norm() > 1e-10 * curv_scale {
                return Err(Error::Invariant(format!(
                    "log-squared source of size {:.3e} at the obstruction order",
                    r_log.sup_norm()
                )));
            }
            let tr_r = r.trace();
            let mut tr_h = tr_r.clone();
            tr_h.scale(1.0 / (nf * nf));

            // k = h0 . (n TrH Id - R)/n, automatically trace-free.
            let mut k_endo = r.clone();
            k_endo.scale(-1.0 / nf);
            endo_add_diag(&mut k_endo, &tr_h, 1.0);
            let k_sym = k_endo.lower_with(&g0);
            let log_active = k_sym.sup_norm() > 1e-10 * curv_scale;

            // Trace part of h_n, then the divergence-matching potential.
            let mut unit_trace = tr_h.clone();
            unit_trace.scale(1.0 / nf);
            let mut h_n = sym_scale_pointwise(&g0, &unit_trace);
            h.set(m, h_n.clone());
            if log_active {
                h.set_log(m, k_sym.clone());
            }
            let hv2 = h.truncate(m);
            let hinv2 = hv2.metric_inverse()?;
            let gam2 = gamma_series(&hv2, &hinv2, m - 1)?;
            let a2 = raise_product(&hinv2, &hv2.d_dx()?)?;
            let ta2 = a2.trace_series();
            let (v_free, v_log) = divergence_flow_slot(&gam2, &a2, &ta2, m - 1)?;
            if v_free.sup_norm() > 1e-12 * curv_scale {
                let mut rhs = v_free.clone();
                rhs.scale(-1.0 / nf);
                let (rpot, _iters) = geo.potential_from_divergence(&rhs)?;
                h_n.axpy(1.0, &rpot);
                h.set(m, h_n.clone());
            }

            if log_active {
                obstruction_field = k_sym.clone();
                trace_constraint = geo.trace(&k_sym).sup_norm();
                div_constraint = v_log.sup_norm() / mf;
            }

            if let Some(nu) = neumann {
                let tol = 1e-6 * (1.0 + h_n.sup_norm() + nu.sup_norm());
                let dtr = {
                    let mut d = geo.trace(nu);
                    d.axpy(-1.0, &geo.trace(&h_n));
                    d.sup_norm()
                };
                let ddiv = {
                    let mut d = geo.divergence_sym(nu);
                    d.axpy(-1.0, &geo.divergence_sym(&h_n));
                    d.sup_norm()
                };
                if dtr > tol || ddiv > tol {
                    return Err(Error::Domain(format!(
                        "Neumann data is incompatible with the constraint equations: \
                         trace mismatch {dtr:.3e}, divergence mismatch {ddiv:.3e} \
                         (tolerance {tol:.3e})"
                    )));
                }
                h_n = nu.clone();
                h.set(m, h_n);
            }
            continue;
        }

        // Generic order: the log slot, when sourced, has its own copy of the
        // linear equation.
        let mut k_endo: Option<EndoField> = None;
        if r_log.sup_norm() > 1e-13 * curv_scale {
            if m == 2 * n {
                return Err(Error::Invariant(format!(
                    "log source of size {:.3e} at the degenerate trace order x^{}",
                    r_log.sup_norm(),
                    m
                )));
            }
            let mut tr_k = r_log.trace();
            tr_k.scale(-1.0 / denom_tr);
            let mut ke = r_log.clone();
            ke.scale(-1.0);
            endo_add_diag(&mut ke, &tr_k, mf);
            ke.scale(1.0 / denom_tf);
            h.set_log(m, ke.lower_with(&g0));
            k_endo = Some(ke);
        }

        // The log coefficient back-reacts on the non-log equation:
        // m(m-n) H - m TrH Id + (2m-n) K - TrK Id + R = 0.
        let mut r_eff = r;
        if let Some(ke) = &k_endo {
            r_eff.axpy(2.0 * mf - nf, ke);
            let mut tk = ke.trace();
            tk.scale(-1.0);
            endo_add_diag(&mut r_eff, &tk, 1.0);
        }

        let mut tr_h = r_eff.trace();
        if m == 2 * n {
            // The trace of the flow equation degenerates; fall back on the
            // x^{m-2} coefficient of the trace equation, whose linear part is
            // m(m-2) TrH.
            let a = raise_product(&hinv, &hv.d_dx()?)?;
            let e1 = trace_flow_series(&a)?;
            tr_h = e1.at(m - 2);
            tr_h.scale(-1.0 / (mf * (mf - 2.0)));
        } else {
            tr_h.scale(-1.0 / denom_tr);
        }

        let mut h_endo = r_eff;
        h_endo.scale(-1.0);
        endo_add_diag(&mut h_endo, &tr_h, mf);
        h_endo.scale(1.0 / denom_tf);
        h.set(m, h_endo.lower_with(&g0));
    }

    // Residual report on the solved series.
    let hv = h.truncate(order);
    let hinv = hv.metric_inverse()?;
    let gam = gamma_series(&hv, &hinv, order.saturating_sub(2))?;
    let ric = ricci_series(&gam, n, order.saturating_sub(2))?;
    let e3 = einstein_flow_series(n, &hv, &hinv, &ric)?;
    let a = raise_product(&hinv, &hv.d_dx()?)?;
    let ta = a.trace_series();
    let e1 = trace_flow_series(&a)?;
    let mut by_order = vec![0.0f64; order + 1];
    for m in 1..=order {
        let mut worst = e3.at(m - 1).sup_norm().max(e3.at_log(m - 1).sup_norm());
        if m >= 2 {
            worst = worst.max(e1.at(m - 2).sup_norm()).max(e1.at_log(m - 2).sup_norm());
        }
        let (d_c, d_l) = divergence_flow_slot(&gam, &a, &ta, m - 1)?;
        worst = worst.max(d_c.sup_norm()).max(d_l.sup_norm());
        by_order[m] = worst;
    }

    let volume = hv.sqrt_det()?;
    Ok(FGExpansion {
        h0: h0.clone(),
        coeffs: hv,
        neumann: neumann.cloned(),
        obstruction: obstruction_field,
        volume,
        residuals: FGResiduals {
            trace_constraint,
            div_constraint,
            einstein_residual_by_order: by_order,
        },
    })
}

// ---------------------------------------------------------------------------
// anomaly linearization at an Einstein boundary

/// Pointwise first variations of the volume coefficients along a direction.
#[derive(Debug, Clone)]
pub struct VnLinearization {
    pub vdot2: ScalarField,
    pub vdot_n: ScalarField,
    /// L^2-fitted proportionality vdot_n / vdot2; None when the direction is
    /// degenerate (vdot2 = 0).
    pub ratio: Option<f64>,
}

/// Central finite difference of (v_2, v_n) along `hdot` at an Einstein
/// boundary metric. On curvature models only uniform scalings stay inside the
/// family; sampled metrics admit arbitrary directions.
pub fn linearize_vn_at_einstein(
    h0: &ChartMetric,
    hdot: &SymTensorField,
    eps: f64,
) -> Result<VnLinearization> {
    let n = h0.dim();
    if n % 2 != 0 {
        return Err(Error::Domain(format!(
            "anomaly coefficient v_n needs even boundary dimension, got {n}"
        )));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step {eps} must be positive")));
    }
    let grid = h0.grid();
    let g0 = h0.components();

    if let Some(lambda) = h0.model_lambda() {
        // hdot must be c g0 with constant c: the only variations that stay in
        // the constant-curvature family on a fixed chart. Model components
        // are the identity, so g0 is its own inverse.
        let tr = hdot.endo_with(&g0).trace();
        let c = tr.data.iter().sum::<f64>() / (tr.data.len() as f64 * n as f64);
        let mut resid = hdot.clone();
        resid.axpy(-c, &g0);
        if resid.sup_norm() > 1e-10 * (1.0 + hdot.sup_norm()) {
            return Err(Error::Domain(
                "on a curvature model only uniform scaling directions stay in the family; \
                 sample the metric on a chart for general variations"
                    .into(),
            ));
        }
        // (1 + t c) h0 has curvature lambda / (1 + t c).
        let v_at = |t: f64| -> (f64, f64) {
            let lam = lambda / (1.0 + t * c);
            let v2 = -(n as f64) * lam / 4.0;
            let mut vn = 1.0;
            for j in 0..n / 2 {
                vn *= (n - j) as f64 / (j + 1) as f64 * (-lam / 4.0);
            }
            (v2, vn)
        };
        let (v2p, vnp) = v_at(eps);
        let (v2m, vnm) = v_at(-eps);
        let vdot2 = ScalarField::constant(&grid, (v2p - v2m) / (2.0 * eps));
        let vdot_n = ScalarField::constant(&grid, (vnp - vnm) / (2.0 * eps));
        let ratio = if vdot2.sup_norm() > 1e-14 {
            Some(vdot_n.data[0] / vdot2.data[0])
        } else {
            None
        };
        return Ok(VnLinearization { vdot2, vdot_n, ratio });
    }

    let solve_at = |t: f64| -> Result<(ScalarField, ScalarField)> {
        let mut comps = g0.clone();
        comps.axpy(t, hdot);
        let metric = ChartMetric::from_components(comps)?;
        let fg = solve_fg(&metric, None, n)?;
        Ok((fg.volume_coefficient(2), fg.volume_coefficient(n)))
    };
    let (v2p, vnp) = solve_at(eps)?;
    let (v2m, vnm) = solve_at(-eps)?;
    let scale = 1.0 / (2.0 * eps);
    let mut vdot2 = v2p;
    vdot2.axpy(-1.0, &v2m);
    vdot2.scale(scale);
    let mut vdot_n = vnp;
    vdot_n.axpy(-1.0, &vnm);
    vdot_n.scale(scale);

    let geo = Geometry::new(h0)?;
    let denom = geo.l2_pairing_scalars(&vdot2, &vdot2);
    let ratio = if denom > 1e-24 * geo.volume() {
        Some(geo.l2_pairing_scalars(&vdot_n, &vdot2) / denom)
    } else {
        None
    };
    Ok(VnLinearization { vdot2, vdot_n, ratio })
}
