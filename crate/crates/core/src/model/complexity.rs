use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::Model;
use crate::nn::{BatchNorm, Linear, Projection, ResBlock};
use crate::scalar::Real;

/// Published parameter count of the reference network.
pub const REFERENCE_PARAMS: f64 = 0.334e6;
/// Published forward cost of the reference network, in GFLOPs.
pub const REFERENCE_GFLOPS: f64 = 0.587;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Tt,
    Grouped,
    BatchNorm,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Tt => "tt",
            LayerKind::Grouped => "grouped",
            LayerKind::BatchNorm => "batchnorm",
        }
    }
}

/// Counts for one layer at batch size 1.
///
/// `dense_params` and `dense_macs` are the counts of the same layer in the
/// rank-0 twin. Multiply-adds cover the linear maps only.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerComplexity {
    pub name: String,
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub rows: usize,
    pub params: usize,
    pub dense_params: usize,
    pub macs: u64,
    pub dense_macs: u64,
}

impl LayerComplexity {
    /// Dense weight entries over TT core entries (biases excluded). 1 for
    /// non-TT layers.
    pub fn weight_ratio(&self) -> f64 {
        if self.kind == LayerKind::Tt {
            let dense = self.in_dim * self.out_dim;
            dense as f64 / (self.params - self.out_dim) as f64
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityReport {
    pub layers: Vec<LayerComplexity>,
    pub params_total: usize,
    pub twin_params_total: usize,
    pub macs_forward: u64,
    pub twin_macs_forward: u64,
}

impl ComplexityReport {
    /// Twin parameters over model parameters.
    pub fn compression_ratio(&self) -> f64 {
        self.twin_params_total as f64 / self.params_total as f64
    }

    pub fn max_layer_ratio(&self) -> f64 {
        self.layers.iter().map(LayerComplexity::weight_ratio).fold(1.0, f64::max)
    }

    /// FLOPs counting one per multiply-add.
    pub fn flops_mac1(&self) -> u64 {
        self.macs_forward
    }

    /// FLOPs counting two per multiply-add.
    pub fn flops_mac2(&self) -> u64 {
        2 * self.macs_forward
    }

    pub fn params_by_layer(&self) -> impl Iterator<Item = (&str, usize)> {
        self.layers.iter().map(|l| (l.name.as_str(), l.params))
    }

    /// `(params / published - 1, gflops / published - 1)` using the 2-per-MAC
    /// convention.
    pub fn reference_delta(&self) -> (f64, f64) {
        (
            self.params_total as f64 / REFERENCE_PARAMS - 1.0,
            self.flops_mac2() as f64 / 1e9 / REFERENCE_GFLOPS - 1.0,
        )
    }
}

struct Collector(Vec<LayerComplexity>);

impl Collector {
    fn dense<T: Real>(&mut self, name: String, l: &Linear<T>, rows: usize) {
        let p = l.in_dim() * l.out_dim() + l.out_dim();
        let macs = (rows * l.in_dim() * l.out_dim()) as u64;
        self.0.push(LayerComplexity {
            name,
            kind: LayerKind::Dense,
            in_dim: l.in_dim(),
            out_dim: l.out_dim(),
            rows,
            params: p,
            dense_params: p,
            macs,
            dense_macs: macs,
        });
    }

    fn bn<T: Real>(&mut self, name: String, bn: &BatchNorm<T>, rows: usize) {
        let c = bn.channels();
        self.0.push(LayerComplexity {
            name,
            kind: LayerKind::BatchNorm,
            in_dim: c,
            out_dim: c,
            rows,
            params: 2 * c,
            dense_params: 2 * c,
            macs: 0,
            dense_macs: 0,
        });
    }

    fn projection<T: Real>(&mut self, name: String, p: &Projection<T>, rows: usize) {
        match p {
            Projection::Dense(l) => self.dense(name, l, rows),
            Projection::Tt(t) => {
                let (i, o) = (t.in_dim(), t.out_dim());
                self.0.push(LayerComplexity {
                    name,
                    kind: LayerKind::Tt,
                    in_dim: i,
                    out_dim: o,
                    rows,
                    params: crate::ttcore::count_params(t.cores(), true),
                    dense_params: i * o + o,
                    macs: t.cores().shape().forward_macs(rows),
                    dense_macs: (rows * i * o) as u64,
                });
            }
        }
    }

    fn block<T: Real>(&mut self, prefix: &str, b: &ResBlock<T>, rows: usize) {
        self.projection(format!("{prefix}/l1"), &b.l1, rows);
        self.bn(format!("{prefix}/bn1"), &b.bn1, rows);
        self.projection(format!("{prefix}/l2"), &b.l2, rows);
        self.bn(format!("{prefix}/bn2"), &b.bn2, rows);
    }
}

/// Parameter and multiply-add counts for one clip.
pub fn report_complexity<T: Real>(model: &Model<T>) -> ComplexityReport {
    let cfg = model.config();
    let mut c = Collector(Vec::new());
    let n = cfg.num_points;
    c.dense("embed".into(), &model.embed, n);
    c.bn("embed_bn".into(), &model.embed_bn, n);
    let mut points = n;
    for (i, st) in model.stages.iter().enumerate() {
        let p = format!("stage{}", i + 1);
        let (s, k) = (st.config.num_groups, st.config.neighbors);
        let t = &st.transfer;
        let (d, out) = (t.feature_dim(), t.out_dim());
        let params = (d + 3) * out + out;
        let macs = (points * d * out + s * k * 3 * out) as u64;
        c.0.push(LayerComplexity {
            name: format!("{p}/transfer"),
            kind: LayerKind::Grouped,
            in_dim: d + 3,
            out_dim: out,
            rows: s * k,
            params,
            dense_params: params,
            macs,
            dense_macs: macs,
        });
        c.bn(format!("{p}/transfer_bn"), &st.transfer_bn, s * k);
        for (j, b) in st.local.iter().enumerate() {
            c.block(&format!("{p}/local{j}"), b, s * k);
        }
        c.dense(format!("{p}/lift"), &st.lift, s);
        c.bn(format!("{p}/lift_bn"), &st.lift_bn, s);
        for (j, b) in st.global.iter().enumerate() {
            c.block(&format!("{p}/global{j}"), b, s);
        }
        points = s;
    }
    for (i, h) in model.hidden.iter().enumerate() {
        c.dense(format!("head/fc{i}"), &h.linear, 1);
        c.bn(format!("head/bn{i}"), &h.bn, 1);
    }
    c.dense("head/out".into(), &model.output, 1);
    let layers = c.0;
    ComplexityReport {
        params_total: layers.iter().map(|l| l.params).sum(),
        twin_params_total: layers.iter().map(|l| l.dense_params).sum(),
        macs_forward: layers.iter().map(|l| l.macs).sum(),
        twin_macs_forward: layers.iter().map(|l| l.dense_macs).sum(),
        layers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::nn::Module;
    use crate::rng::DetRng;
    use rand::SeedableRng;

    #[test]
    fn totals_match_enumerated_tensors() {
        let mut rng = DetRng::seed_from_u64(9);
        let model = Model::<f32>::build(&ModelConfig::reference(11), &mut rng).unwrap();
        let r = report_complexity(&model);
        assert_eq!(r.params_total, model.num_params());
        assert_eq!(r.twin_params_total, model.to_dense().num_params());
        let ratio = r.compression_ratio();
        assert!((1.7..=2.7).contains(&ratio), "ratio {ratio}");
    }
}
