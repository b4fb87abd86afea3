//! Dilated 2d convolution over `[time, frequency, feature]` grids.
//!
//! The time axis is never padded: a layer with kernel `k_t` and dilation
//! `d_t` shortens the sequence by `d_t * (k_t - 1)`. The frequency axis is
//! either unpadded or zero padded so the bin count is preserved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    None,
    SameFrequency,
}

/// How output time indices relate to input time indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Output `i` belongs to the newest input it reads.
    CausalTime,
    /// Output `i` sits in the middle of the window it reads.
    SymmetricTime,
    NotApplicable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: Padding,
    pub alignment: Alignment,
    pub in_features: usize,
    pub out_features: usize,
}

impl ConvSpec {
    /// `(k_t x 1)` time convolution with dilation `(d_t, 1)`.
    pub fn time(k_t: usize, d_t: usize, alignment: Alignment, cin: usize, cout: usize) -> Self {
        Self {
            kernel: (k_t, 1),
            dilation: (d_t, 1),
            padding: Padding::None,
            alignment,
            in_features: cin,
            out_features: cout,
        }
    }

    /// `(1 x k_f)` frequency convolution with zero padding keeping the bin count.
    pub fn frequency(k_f: usize, d_f: usize, cin: usize, cout: usize) -> Self {
        Self {
            kernel: (1, k_f),
            dilation: (1, d_f),
            padding: Padding::SameFrequency,
            alignment: Alignment::NotApplicable,
            in_features: cin,
            out_features: cout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (kt, kf) = self.kernel;
        let (dt, df) = self.dilation;
        if kt == 0 || kf == 0 || dt == 0 || df == 0 {
            return Err(Error::Config(format!(
                "kernel {:?} and dilation {:?} must be >= 1",
                self.kernel, self.dilation
            )));
        }
        if self.in_features == 0 || self.out_features == 0 {
            return Err(Error::Config("feature counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of input frames consumed beyond the first: `d_t * (k_t - 1)`.
    pub fn time_span(&self) -> usize {
        self.dilation.0 * (self.kernel.0 - 1)
    }

    fn freq_span(&self) -> usize {
        self.dilation.1 * (self.kernel.1 - 1)
    }

    /// Offset subtracted from the frequency index of the first tap.
    fn freq_offset(&self) -> usize {
        match self.padding {
            Padding::None => 0,
            Padding::SameFrequency => self.freq_span() / 2,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.kernel.0,
            self.kernel.1,
            self.in_features,
            self.out_features,
        ]
    }

    /// Output `(time, frequency)` extents for an input of `(t, f)`.
    pub fn output_extent(&self, t: usize, f: usize) -> Result<(usize, usize)> {
        let need_t = self.time_span() + 1;
        if t < need_t {
            return Err(Error::TooShort {
                what: "conv2d time axis".into(),
                required: need_t,
                actual: t,
            });
        }
        let out_f = match self.padding {
            Padding::SameFrequency => f,
            Padding::None => {
                let need_f = self.freq_span() + 1;
                if f < need_f {
                    return Err(Error::TooShort {
                        what: "conv2d frequency axis".into(),
                        required: need_f,
                        actual: f,
                    });
                }
                f - self.freq_span()
            }
        };
        Ok((t - self.time_span(), out_f))
    }

    /// Input time index an output index is aligned with.
    pub fn aligned_input_index(&self, out: usize) -> usize {
        match self.alignment {
            Alignment::CausalTime => out + self.time_span(),
            Alignment::SymmetricTime => out + self.time_span().div_ceil(2),
            Alignment::NotApplicable => out,
        }
    }
}

/// Extents of a rank-3 tensor whose frequency axis holds `blocks`
/// independent runs of `f` bins each (one per batch element).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Grid {
    pub t: usize,
    pub f: usize,
    pub c: usize,
    pub blocks: usize,
}

impl Grid {
    #[inline]
    fn row(&self, t: usize, blk: usize, f: usize) -> usize {
        ((t * self.blocks + blk) * self.f + f) * self.c
    }
}

/// Output frequencies `lo..hi` whose `tap` reads input frequency
/// `fo + shift`, inside the input.
#[inline]
fn tap_range(spec: &ConvSpec, tap: usize, f_in: usize, f_out: usize) -> (usize, usize, isize) {
    let shift = (tap * spec.dilation.1) as isize - spec.freq_offset() as isize;
    let lo = (-shift).max(0) as usize;
    let hi = (f_in as isize - shift).clamp(0, f_out as isize) as usize;
    (lo, hi.max(lo), shift)
}

pub(crate) fn forward(
    spec: &ConvSpec,
    x: &[f64],
    xg: Grid,
    w: &[f64],
    b: &[f64],
    out: &mut [f64],
    og: Grid,
) {
    let (kt, kf) = spec.kernel;
    let (ci, co) = (xg.c, og.c);
    for to in 0..og.t {
        for blk in 0..og.blocks {
            let orow = &mut out[og.row(to, blk, 0)..][..og.f * co];
            for o in orow.chunks_exact_mut(co) {
                o.copy_from_slice(b);
            }
            for a in 0..kt {
                let xrow = &x[xg.row(to + a * spec.dilation.0, blk, 0)..][..xg.f * ci];
                for tap in 0..kf {
                    let (lo, hi, shift) = tap_range(spec, tap, xg.f, og.f);
                    let wblk = &w[(a * kf + tap) * ci * co..][..ci * co];
                    let fi0 = (lo as isize + shift) as usize;
                    let xs = &xrow[fi0 * ci..(fi0 + hi - lo) * ci];
                    for (o, xv) in orow[lo * co..hi * co].chunks_exact_mut(co).zip(xs.chunks_exact(ci)) {
                        for (&xv, wrow) in xv.iter().zip(wblk.chunks_exact(co)) {
                            for (ov, &wv) in o.iter_mut().zip(wrow) {
                                *ov += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates gradients for input, weights and bias. Any of the three
/// destinations may be skipped by passing `None`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    spec: &ConvSpec,
    x: &[f64],
    xg: Grid,
    w: &[f64],
    gout: &[f64],
    og: Grid,
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    let (kt, kf) = spec.kernel;
    let (ci, co) = (xg.c, og.c);
    if let Some(gb) = gb {
        for go in gout.chunks_exact(co) {
            for (g, &v) in gb.iter_mut().zip(go) {
                *g += v;
            }
        }
    }
    for to in 0..og.t {
        for blk in 0..og.blocks {
            let grow = &gout[og.row(to, blk, 0)..][..og.f * co];
            for a in 0..kt {
                let xoff = xg.row(to + a * spec.dilation.0, blk, 0);
                for tap in 0..kf {
                    let (lo, hi, shift) = tap_range(spec, tap, xg.f, og.f);
                    if lo == hi {
                        continue;
                    }
                    let woff = (a * kf + tap) * ci * co;
                    let fi0 = (lo as isize + shift) as usize;
                    let xr = xoff + fi0 * ci..xoff + (fi0 + hi - lo) * ci;
                    let gs = &grow[lo * co..hi * co];
                    if let Some(gx) = gx.as_deref_mut() {
                        let wblk = &w[woff..][..ci * co];
                        for (gxv, go) in gx[xr.clone()].chunks_exact_mut(ci).zip(gs.chunks_exact(co)) {
                            for (g, wrow) in gxv.iter_mut().zip(wblk.chunks_exact(co)) {
                                *g += wrow.iter().zip(go).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        let gblk = &mut gw[woff..][..ci * co];
                        for (xv, go) in x[xr].chunks_exact(ci).zip(gs.chunks_exact(co)) {
                            for (&xv, grow) in xv.iter().zip(gblk.chunks_exact_mut(co)) {
                                for (g, &v) in grow.iter_mut().zip(go) {
                                    *g += xv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_formula() {
        let spec = ConvSpec::time(2, 8, Alignment::CausalTime, 1, 1);
        assert_eq!(spec.output_extent(16, 60).unwrap(), (8, 60));
    }

    #[test]
    fn dilation_stack_lengths() {
        let mut t = 16;
        let mut lens = vec![];
        for l in 0..4 {
            let spec = ConvSpec::time(2, 1 << l, Alignment::CausalTime, 1, 1);
            t = spec.output_extent(t, 60).unwrap().0;
            lens.push(t);
        }
        assert_eq!(lens, vec![15, 13, 9, 1]);
    }

    #[test]
    fn too_short_names_extents() {
        let spec = ConvSpec::time(2, 8, Alignment::CausalTime, 1, 1);
        let err = spec.output_extent(8, 60).unwrap_err();
        match err {
            Error::TooShort {
                required, actual, ..
            } => {
                assert_eq!(required, 9);
                assert_eq!(actual, 8);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_string(&spec).contains("requires 9 but got 8"));
    }

    fn err_string(spec: &ConvSpec) -> String {
        spec.output_extent(8, 60).unwrap_err().to_string()
    }

    #[test]
    fn same_frequency_offsets_are_centered() {
        let spec = ConvSpec {
            kernel: (1, 3),
            dilation: (1, 4),
            padding: Padding::SameFrequency,
            alignment: Alignment::NotApplicable,
            in_features: 1,
            out_features: 1,
        };
        // Output bin 10 reads bins 6, 10 and 14; bins 2 and 58 lose a tap.
        assert_eq!(tap_range(&spec, 0, 60, 60), (4, 60, -4));
        assert_eq!(tap_range(&spec, 1, 60, 60), (0, 60, 0));
        assert_eq!(tap_range(&spec, 2, 60, 60), (0, 56, 4));
    }

    #[test]
    fn symmetric_alignment_composes_to_window_center() {
        // Six symmetric layers cover 64 frames and are centred at index 32.
        let mut offset = 0;
        for l in 0..6 {
            let spec = ConvSpec::time(2, 1 << l, Alignment::SymmetricTime, 1, 1);
            offset += spec.aligned_input_index(0);
        }
        assert_eq!(offset, 32);
    }
}
