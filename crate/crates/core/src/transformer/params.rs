use std::fmt::Debug;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::embedding::QuantileEmbeddingInit;
use crate::error::{Error, Result};

/// Floating-point element type of the model, with its GEMM kernel.
pub trait Real:
    num_traits::Float + num_traits::FromPrimitive + std::iter::Sum + Default + Debug + Send + Sync + 'static
{
    /// `C = alpha * A * B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// All pointers with their strides must address valid memory for the
    /// given dimensions, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Real for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Strided matrix view: `(offset, rows, cols, row_stride, col_stride)` into a slice.
#[derive(Clone, Copy)]
pub(crate) struct View {
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn dense(rows: usize, cols: usize) -> Self {
        Self {
            off: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn at(self, off: usize) -> Self {
        Self { off, ..self }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn end(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            self.off
        } else {
            self.off + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `C = A B + beta C` on strided views, bounds-checked.
pub(crate) fn gemm<R: Real>(a: &[R], va: View, b: &[R], vb: View, c: &mut [R], vc: View, beta: R) {
    assert_eq!(va.cols, vb.rows, "inner dimensions");
    assert_eq!((va.rows, vb.cols), (vc.rows, vc.cols), "output shape");
    assert!(va.end() <= a.len() && vb.end() <= b.len() && vc.end() <= c.len(), "view out of bounds");
    if vc.rows == 0 || vc.cols == 0 {
        return;
    }
    // SAFETY: bounds checked above; `c` is a unique borrow distinct from `a` and `b`.
    unsafe {
        R::gemm(
            va.rows,
            va.cols,
            vb.cols,
            R::one(),
            a.as_ptr().add(va.off),
            va.rs as isize,
            va.cs as isize,
            b.as_ptr().add(vb.off),
            vb.rs as isize,
            vb.cs as isize,
            beta,
            c.as_mut_ptr().add(vc.off),
            vc.rs as isize,
            vc.cs as isize,
        );
    }
}

/// `C (m x n) = op(A) op(B) + beta C` for dense row-major operands, where
/// `A` is stored `m x k` (or `k x m` if `ta`) and `B` is `k x n` (or `n x k` if `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<R: Real>(m: usize, k: usize, n: usize, a: &[R], ta: bool, b: &[R], tb: bool, c: &mut [R], beta: R) {
    let va = if ta { View::dense(k, m).t() } else { View::dense(m, k) };
    let vb = if tb { View::dense(n, k).t() } else { View::dense(k, n) };
    gemm(a, va, b, vb, c, View::dense(m, n), beta);
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_qkv: usize,
    pub b_qkv: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_fc: usize,
    pub b_fc: usize,
    pub w_proj: usize,
    pub b_proj: usize,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub wte: usize,
    pub wpe: usize,
    pub layers: Vec<LayerOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub total: usize,
}

/// One named tensor of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamLayout {
    pub fn new(c: &ModelConfig) -> Self {
        let (v, l, d, f) = (c.vocab, c.max_len, c.d_model, c.d_ff);
        let mut next = 0;
        let mut take = |n: usize| {
            let o = next;
            next += n;
            o
        };
        let wte = take(v * d);
        let wpe = take(l * d);
        let layers = (0..c.n_layers)
            .map(|_| LayerOffsets {
                ln1_g: take(d),
                ln1_b: take(d),
                w_qkv: take(d * 3 * d),
                b_qkv: take(3 * d),
                w_o: take(d * d),
                b_o: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w_fc: take(d * f),
                b_fc: take(f),
                w_proj: take(f * d),
                b_proj: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        Self {
            wte,
            wpe,
            layers,
            lnf_g,
            lnf_b,
            total: next,
        }
    }

    /// Tensor manifest in storage order.
    pub fn tensors(&self, c: &ModelConfig) -> Vec<TensorInfo> {
        let (v, l, d, f) = (c.vocab, c.max_len, c.d_model, c.d_ff);
        let mut out = vec![
            TensorInfo {
                name: "wte".into(),
                offset: self.wte,
                shape: vec![v, d],
            },
            TensorInfo {
                name: "wpe".into(),
                offset: self.wpe,
                shape: vec![l, d],
            },
        ];
        for (i, lo) in self.layers.iter().enumerate() {
            let entries: [(&str, usize, Vec<usize>); 12] = [
                ("ln1.g", lo.ln1_g, vec![d]),
                ("ln1.b", lo.ln1_b, vec![d]),
                ("attn.w_qkv", lo.w_qkv, vec![d, 3 * d]),
                ("attn.b_qkv", lo.b_qkv, vec![3 * d]),
                ("attn.w_o", lo.w_o, vec![d, d]),
                ("attn.b_o", lo.b_o, vec![d]),
                ("ln2.g", lo.ln2_g, vec![d]),
                ("ln2.b", lo.ln2_b, vec![d]),
                ("ff.w_fc", lo.w_fc, vec![d, f]),
                ("ff.b_fc", lo.b_fc, vec![f]),
                ("ff.w_proj", lo.w_proj, vec![f, d]),
                ("ff.b_proj", lo.b_proj, vec![d]),
            ];
            out.extend(entries.into_iter().map(|(n, offset, shape)| TensorInfo {
                name: format!("h{i}.{n}"),
                offset,
                shape,
            }));
        }
        out.push(TensorInfo {
            name: "lnf.g".into(),
            offset: self.lnf_g,
            shape: vec![d],
        });
        out.push(TensorInfo {
            name: "lnf.b".into(),
            offset: self.lnf_b,
            shape: vec![d],
        });
        out
    }
}

/// Transformer weights in one flat vector; the output projection is tied to `wte`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<R: Real> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub data: Vec<R>,
}

const INIT_STD: f64 = 0.02;

impl<R: Real> ModelParameters<R> {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        Ok(Self {
            data: vec![R::zero(); layout.total],
            layout,
            config,
        })
    }

    /// Gaussian initialization (std 0.02, residual projections scaled by
    /// `1/sqrt(2 layers)`), unit norm gains, zero biases. If given, the rows of
    /// `quant_rows` in the token table are overwritten with the sigmoid
    /// quantile embedding.
    pub fn init(config: ModelConfig, quant_rows: Option<Range<usize>>, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let c = &p.config;
        let (d, f) = (c.d_model, c.d_ff);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = |std: f64| Normal::new(0.0, std).expect("positive std");
        let mut fill = |data: &mut [R], off: usize, n: usize, std: f64| {
            let dist = normal(std);
            for x in &mut data[off..off + n] {
                *x = R::lit(dist.sample(&mut rng));
            }
        };
        let proj_std = INIT_STD / (2.0 * c.n_layers.max(1) as f64).sqrt();
        fill(&mut p.data, p.layout.wte, c.vocab * d, INIT_STD);
        fill(&mut p.data, p.layout.wpe, c.max_len * d, INIT_STD);
        for lo in &p.layout.layers {
            fill(&mut p.data, lo.w_qkv, d * 3 * d, INIT_STD);
            fill(&mut p.data, lo.w_o, d * d, proj_std);
            fill(&mut p.data, lo.w_fc, d * f, INIT_STD);
            fill(&mut p.data, lo.w_proj, f * d, proj_std);
            for g in [lo.ln1_g, lo.ln2_g] {
                p.data[g..g + d].iter_mut().for_each(|x| *x = R::one());
            }
        }
        let g = p.layout.lnf_g;
        p.data[g..g + d].iter_mut().for_each(|x| *x = R::one());

        if let Some(rows) = quant_rows {
            if rows.end > c.vocab {
                return Err(Error::invalid(format!(
                    "quantile rows {rows:?} exceed vocabulary {}",
                    c.vocab
                )));
            }
            if !rows.is_empty() {
                let qe = QuantileEmbeddingInit::new(rows.len(), d);
                for (i, tok) in rows.enumerate() {
                    let off = p.layout.wte + tok * d;
                    for (x, &v) in p.data[off..off + d].iter_mut().zip(qe.row(i)) {
                        *x = R::lit(v);
                    }
                }
            }
        }
        Ok(p)
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn embedding_row(&self, tok: usize) -> &[R] {
        let d = self.config.d_model;
        &self.data[self.layout.wte + tok * d..self.layout.wte + (tok + 1) * d]
    }

    /// Converts every element, keeping configuration and layout.
    pub fn cast<S: Real>(&self) -> ModelParameters<S> {
        ModelParameters {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self
                .data
                .iter()
                .map(|v| S::from_f64(v.to_f64().expect("finite")).expect("castable"))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::quantile_embedding_value;
    use crate::transformer::config::Preset;

    #[test]
    fn layout_covers_vector() {
        let c = ModelConfig::from_preset(Preset::Tiny, 50, 12);
        let l = ParamLayout::new(&c);
        let manifest = l.tensors(&c);
        let mut next = 0;
        for t in &manifest {
            assert_eq!(t.offset, next, "{}", t.name);
            next += t.shape.iter().product::<usize>();
        }
        assert_eq!(next, l.total);
    }

    #[test]
    fn quantile_rows_initialized() {
        let c = ModelConfig::from_preset(Preset::Tiny, 30, 8);
        let p = ModelParameters::<f64>::init(c, Some(10..20), 1).unwrap();
        for i in 0..10 {
            for d in 0..64 {
                assert_eq!(p.embedding_row(10 + i)[d], quantile_embedding_value(i, d, 10));
            }
        }
        assert!(p.embedding_row(5).iter().all(|v| v.abs() < 0.2));
    }

    #[test]
    fn strided_gemm_matches_naive() {
        // A is 2x3 stored transposed inside a wider buffer
        let a: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let va = View {
            off: 1,
            rows: 2,
            cols: 3,
            rs: 1,
            cs: 4,
        };
        let b: Vec<f64> = (0..6).map(|v| (v as f64) * 0.5).collect();
        let mut c = vec![0.0; 4];
        gemm(&a, va, &b, View::dense(3, 2), &mut c, View::dense(2, 2), 0.0);
        for i in 0..2 {
            for j in 0..2 {
                let want: f64 = (0..3).map(|k| a[1 + i + 4 * k] * b[k * 2 + j]).sum();
                assert_eq!(c[i * 2 + j], want);
            }
        }
    }
}
