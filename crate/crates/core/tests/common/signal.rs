//! Preprocessing properties and the oversampled resampling oracle.

use std::f64::consts::PI;

use proptest::prelude::*;
use remoni_core::signal::{normalize, rescale, resample, resample_to, window, Resampler, WINDOW_LEN, WINDOW_STRIDE};
use remoni_core::AccelSample;

use super::{close, ensure, runner, Check};

/// Timestamps of a 238 Hz recording starting at `base`.
fn stamps(base: i64, n: usize) -> Vec<i64> {
    (0..n as i64).map(|i| base + i * 1000 / 238).collect()
}

fn signal_strategy(max_len: usize, amp: f64) -> impl Strategy<Value = Vec<AccelSample>> {
    (0i64..1_000_000_000, 2..max_len).prop_flat_map(move |(base, n)| {
        prop::collection::vec((-amp..=amp, -amp..=amp, -amp..=amp), n).prop_map(move |xs| {
            stamps(base, xs.len())
                .into_iter()
                .zip(xs)
                .map(|(t, (x, y, z))| AccelSample::new(t, x, y, z))
                .collect()
        })
    })
}

fn first_argmax(xs: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in xs.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn axes(s: &AccelSample) -> [f64; 3] {
    [s.x, s.y, s.z]
}

fn fmt_err(e: proptest::test_runner::TestError<impl std::fmt::Debug>) -> String {
    let text = e.to_string();
    text.chars().take(600).collect()
}

/// Linearity and no-clamp argmax preservation of rescale; idempotence on
/// in-range data.
pub fn check_rescale(cases: u32) -> Check {
    runner(cases)
        .run(&(signal_strategy(400, 8.0), -1.0f64..=1.0), |(s, a)| {
            let r = normalize(&s);
            for (raw, out) in s.iter().zip(&r) {
                ensure(out.t == raw.t, || "timestamp changed".into())?;
                for (v, o) in axes(raw).into_iter().zip(axes(out)) {
                    ensure(close(o, v / 8.0, 1e-15), || format!("{v} -> {o}"))?;
                }
            }
            let scaled: Vec<_> = s.iter().map(|p| AccelSample::new(p.t, a * p.x, a * p.y, a * p.z)).collect();
            for (lhs, rhs) in normalize(&scaled).iter().zip(&r) {
                for (l, v) in axes(lhs).into_iter().zip(axes(rhs)) {
                    ensure(close(l, a * v, 1e-12), || format!("rescale(a*s) != a*rescale(s): {l} vs {}", a * v))?;
                }
            }
            for axis in 0..3 {
                let before = first_argmax(s.iter().map(|p| axes(p)[axis].abs()));
                let after = first_argmax(r.iter().map(|p| axes(p)[axis].abs()));
                ensure(before == after, || format!("axis {axis} argmax {before:?} -> {after:?}"))?;
            }
            let before = first_argmax(s.iter().map(AccelSample::magnitude));
            let after = first_argmax(r.iter().map(AccelSample::magnitude));
            ensure(before == after, || format!("magnitude argmax {before:?} -> {after:?}"))?;
            ensure(rescale(&r, 1.0, 1.0) == r, || "rescale(1->1) not idempotent".into())?;
            Ok(())
        })
        .map_err(fmt_err)?;
    Ok(format!("{cases} signals: linearity, argmax, idempotence"))
}

/// Resampling: grid, count, constant and affine exactness, linearity, and
/// streaming/batch agreement.
pub fn check_resample(cases: u32) -> Check {
    let strat = (
        signal_strategy(600, 1.0),
        -3.0f64..3.0,
        -3.0f64..3.0,
        -1.0f64..1.0,
        -1e-3f64..1e-3,
        1usize..40,
    );
    runner(cases)
        .run(&strat, |(s, a, b, c, slope, chunk)| {
            let out = resample(&s).unwrap();
            let (t0, t_last) = (s[0].t, s[s.len() - 1].t);
            let span = t_last - t0;
            ensure(out.len() as i64 == span * 32 / 1000 + 1, || {
                format!("{} outputs for span {span}", out.len())
            })?;
            for (k, o) in out.iter().enumerate() {
                ensure(o.t == t0 + k as i64 * 1000 / 32, || format!("output {k} at {}", o.t))?;
            }
            let flat: Vec<_> = s.iter().map(|p| AccelSample::new(p.t, c, c, c)).collect();
            ensure(resample(&flat).unwrap().iter().all(|o| o.x == c && o.y == c && o.z == c), || {
                "constant not preserved".into()
            })?;
            let ramp: Vec<_> = s
                .iter()
                .map(|p| {
                    let v = slope * (p.t - t0) as f64 + c;
                    AccelSample::new(p.t, v, -v, 2.0 * v)
                })
                .collect();
            for o in resample(&ramp).unwrap() {
                let v = slope * (o.t - t0) as f64 + c;
                ensure(close(o.x, v, 1e-12) && close(o.y, -v, 1e-12) && close(o.z, 2.0 * v, 1e-12), || {
                    format!("affine at t={}: {} vs {v}", o.t, o.x)
                })?;
            }
            // a*f + b*g with g the time-reversed values of f.
            let g: Vec<_> = s
                .iter()
                .zip(s.iter().rev())
                .map(|(p, q)| AccelSample::new(p.t, q.x, q.z, q.y))
                .collect();
            let mix: Vec<_> = s
                .iter()
                .zip(&g)
                .map(|(p, q)| AccelSample::new(p.t, a * p.x + b * q.x, a * p.y + b * q.y, a * p.z + b * q.z))
                .collect();
            let (rf, rg, rm) = (out, resample(&g).unwrap(), resample(&mix).unwrap());
            for ((f, g), m) in rf.iter().zip(&rg).zip(&rm) {
                for i in 0..3 {
                    let want = a * axes(f)[i] + b * axes(g)[i];
                    ensure(close(axes(m)[i], want, 1e-12), || format!("linearity: {} vs {want}", axes(m)[i]))?;
                }
            }
            let mut rs = Resampler::new(32);
            let mut streamed = Vec::new();
            for part in s.chunks(chunk) {
                for p in part {
                    rs.push(*p, &mut streamed).unwrap();
                }
            }
            ensure(streamed == rf, || "streaming differs from batch".into())?;
            Ok(())
        })
        .map_err(fmt_err)?;
    Ok(format!("{cases} signals: grid, count, constant, affine, linearity"))
}

/// Tiling and overlap consistency of 128/64 windows.
pub fn check_windows(cases: u32) -> Check {
    runner(cases)
        .run(&(0usize..2000), |n| {
            let stream: Vec<_> = (0..n as i64)
                .map(|k| AccelSample::new(k * 1000 / 32, k as f64, 0.0, 0.0))
                .collect();
            let ws = window("p", &stream, WINDOW_LEN, WINDOW_STRIDE);
            let expect = if n < WINDOW_LEN { 0 } else { (n - WINDOW_LEN) / WINDOW_STRIDE + 1 };
            ensure(ws.len() == expect, || format!("{n} samples -> {} windows", ws.len()))?;
            for (k, w) in ws.iter().enumerate() {
                ensure(w.samples.len() == WINDOW_LEN, || "short window".into())?;
                ensure(w.samples[..] == stream[k * WINDOW_STRIDE..k * WINDOW_STRIDE + WINDOW_LEN], || {
                    format!("window {k} is not stream[{}..]", k * WINDOW_STRIDE)
                })?;
                if let Some(next) = ws.get(k + 1) {
                    ensure(next.t_start > w.t_start, || "windows out of order".into())?;
                    ensure(w.samples[WINDOW_STRIDE..] == next.samples[..WINDOW_LEN - WINDOW_STRIDE], || {
                        "overlap mismatch".into()
                    })?;
                }
            }
            let covered = if ws.is_empty() { 0 } else { (ws.len() - 1) * WINDOW_STRIDE + WINDOW_LEN };
            ensure(ws.is_empty() || n - covered < WINDOW_STRIDE, || format!("tail of {} uncovered", n - covered))?;
            Ok(())
        })
        .map_err(fmt_err)?;
    Ok(format!("{cases} streams tiled"))
}

/// Half-sine of `width_ms` peaking at `peak` at `center`.
fn half_sine(t: f64, center: f64, width_ms: f64, peak: f64) -> f64 {
    let u = (t - center) / width_ms + 0.5;
    if (0.0..=1.0).contains(&u) {
        peak * (PI * u).sin()
    } else {
        0.0
    }
}

/// Reference resampler: evaluates the analytic signal on a grid 10x denser
/// than the input rate, then reads each output instant by interpolating that
/// dense grid.
pub fn oracle_resample(f: impl Fn(f64) -> f64, t0: i64, t_end: i64, out_hz: f64) -> Vec<(f64, f64)> {
    let dense_dt = 1000.0 / (238.0 * 10.0);
    let n = ((t_end - t0) as f64 / dense_dt).floor() as usize + 2;
    let dense: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let t = t0 as f64 + i as f64 * dense_dt;
            (t, f(t))
        })
        .collect();
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let t = t0 as f64 + (k as f64 * 1000.0 / out_hz).floor();
        if t > t_end as f64 {
            break;
        }
        let j = dense.partition_point(|(d, _)| *d <= t).clamp(1, dense.len() - 1);
        let ((ta, va), (tb, vb)) = (dense[j - 1], dense[j]);
        out.push((t, va + (t - ta) / (tb - ta) * (vb - va)));
        k += 1;
    }
    out
}

/// Synthetic impacts centered on output instants across input phases and
/// widths: the resampled peak stays within `tol` of the oracle's peak and
/// of the nominal 0.75.
pub fn check_fall_peaks(tol: f64) -> Check {
    let peak = 0.75;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for width in [30.0, 40.0, 60.0] {
        for k in 8..40i64 {
            let base = 1_700_000_000_000 + k * 7;
            let ts = stamps(base, 2 * 238);
            let center = (base + k * 1000 / 32) as f64;
            let f = |t: f64| half_sine(t, center, width, peak);
            let raw: Vec<_> = ts.iter().map(|&t| AccelSample::new(t, f(t as f64), 0.0, 0.0)).collect();
            let got = resample_to(&raw, 32)
                .unwrap()
                .iter()
                .map(|s| s.x)
                .fold(f64::NEG_INFINITY, f64::max);
            let want = oracle_resample(f, ts[0], *ts.last().unwrap(), 32.0)
                .iter()
                .map(|p| p.1)
                .fold(f64::NEG_INFINITY, f64::max);
            let err = ((got - want) / want).abs().max(((got - peak) / peak).abs());
            if err > tol {
                return Err(format!(
                    "width {width} ms, k {k}: resampled {got:.4}, oracle {want:.4}, nominal {peak}"
                ));
            }
            worst = worst.max(err);
            count += 1;
        }
    }
    Ok(format!("{count} spikes, worst peak deviation {:.2}%", worst * 100.0))
}
