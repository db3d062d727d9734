//! Point-cloud part encoder: two simplified set-abstraction stages, inverse
//! distance propagation back to the points and per-segment pooling.

use super::{init_linear, ModelDims};
use crate::diffcore::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::geometry::{
    farthest_point_sampling, knn_positions, propagation_weights, segment_groups, PointCloud, DEFAULT_K,
    DEFAULT_MIN_FRACTION, DEFAULT_POWER,
};

pub const STAGE1_CENTERS: usize = 256;
pub const STAGE2_CENTERS: usize = 64;
pub const STAGE1_GROUP: usize = 16;
pub const STAGE2_GROUP: usize = 8;

/// Parameter-independent inputs of the shape encoder for one cloud.
#[derive(Clone, Debug)]
pub struct ShapeGeometry {
    /// Per first-stage center: position and mean offset of its group (n1 x 6).
    pub stage1: Tensor,
    /// Group averaging from first- to second-stage centers (n2 x n1).
    pub stage2_pool: Tensor,
    /// Second-stage center positions (n2 x 3).
    pub stage2_pos: Tensor,
    /// Propagation to points followed by segment pooling (S x n2).
    pub readout: Tensor,
    pub part_ids: Vec<usize>,
}

fn canonical_order(cloud: &PointCloud) -> Vec<usize> {
    let pos = cloud.positions();
    let labels = cloud.segment_labels();
    let mut order: Vec<usize> = (0..pos.len()).collect();
    order.sort_by(|&a, &b| {
        pos[a][0]
            .total_cmp(&pos[b][0])
            .then(pos[a][1].total_cmp(&pos[b][1]))
            .then(pos[a][2].total_cmp(&pos[b][2]))
            .then_with(|| labels.map_or(std::cmp::Ordering::Equal, |l| l[a].cmp(&l[b])))
    });
    order
}

impl ShapeGeometry {
    pub fn new(cloud: &PointCloud) -> Result<Self> {
        // Point order must not matter, so work on a canonical ordering.
        let cloud = cloud.permuted(&canonical_order(cloud))?;
        let (center, _) = cloud.bounding_sphere();
        let pts: Vec<[f64; 3]> = cloud
            .positions()
            .iter()
            .map(|p| [p[0] - center[0], p[1] - center[1], p[2] - center[2]])
            .collect();
        let n = pts.len();

        let c1 = farthest_point_sampling(&pts, STAGE1_CENTERS);
        let centers1: Vec<[f64; 3]> = c1.iter().map(|&i| pts[i]).collect();
        let k1 = STAGE1_GROUP.min(n);
        let mut stage1 = Vec::with_capacity(centers1.len() * 6);
        for c in &centers1 {
            let group = knn_positions(&pts, c, k1)?;
            let mut mean = [0.0; 3];
            for &(i, _) in &group {
                for a in 0..3 {
                    mean[a] += pts[i][a] - c[a];
                }
            }
            stage1.extend_from_slice(c);
            stage1.extend(mean.iter().map(|m| m / k1 as f64));
        }

        let c2 = farthest_point_sampling(&centers1, STAGE2_CENTERS);
        let centers2: Vec<[f64; 3]> = c2.iter().map(|&i| centers1[i]).collect();
        let (n1, n2) = (centers1.len(), centers2.len());
        let k2 = STAGE2_GROUP.min(n1);
        let mut pool = vec![0.0; n2 * n1];
        for (r, c) in centers2.iter().enumerate() {
            for (i, _) in knn_positions(&centers1, c, k2)? {
                pool[r * n1 + i] = 1.0 / k2 as f64;
            }
        }

        let weights = propagation_weights(&centers2, &pts, DEFAULT_K.min(n2), DEFAULT_POWER)?;
        let labels = cloud.segment_labels().map_or_else(|| vec![0; n], <[usize]>::to_vec);
        let groups = segment_groups(&labels, DEFAULT_MIN_FRACTION)?;
        let mut readout = vec![0.0; groups.len() * n2];
        for (s, (_, members)) in groups.iter().enumerate() {
            let inv = 1.0 / members.len() as f64;
            for &p in members {
                for &(j, w) in &weights[p] {
                    readout[s * n2 + j] += w * inv;
                }
            }
        }

        Ok(ShapeGeometry {
            stage1: Tensor::matrix(n1, 6, stage1)?,
            stage2_pool: Tensor::matrix(n2, n1, pool)?,
            stage2_pos: Tensor::matrix(n2, 3, centers2.iter().flatten().copied().collect())?,
            readout: Tensor::matrix(groups.len(), n2, readout)?,
            part_ids: groups.iter().map(|g| g.0).collect(),
        })
    }
}

/// Part features (S x D).
pub fn encode_shape_on_tape(tape: &mut Tape, params: &ParamStore, geom: &ShapeGeometry) -> Result<Var> {
    let x1 = tape.constant(geom.stage1.clone());
    let w1 = tape.param(params, "shape.sa1.w")?;
    let b1 = tape.param(params, "shape.sa1.b")?;
    let h1 = tape.linear(x1, w1, b1)?;
    let h1 = tape.relu(h1);

    let pool = tape.constant(geom.stage2_pool.clone());
    let grouped = tape.matmul(pool, h1)?;
    let pos = tape.constant(geom.stage2_pos.clone());
    let x2 = tape.concat_cols(&[grouped, pos])?;
    let w2 = tape.param(params, "shape.sa2.w")?;
    let b2 = tape.param(params, "shape.sa2.b")?;
    let h2 = tape.linear(x2, w2, b2)?;
    let h2 = tape.relu(h2);

    let readout = tape.constant(geom.readout.clone());
    tape.matmul(readout, h2)
}

pub(crate) fn init_params(store: &mut ParamStore, dims: &ModelDims, rng: &mut rand_chacha::ChaCha8Rng) -> Result<()> {
    let d = dims.embed_dim;
    init_linear(store, rng, "shape.sa1", 6, d)?;
    init_linear(store, rng, "shape.sa2", d + 3, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{encode_shape, Model};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labelled(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let labels = pts.iter().map(|p| if p[1] > 0.0 { 0 } else { 1 }).collect();
        PointCloud::new(pts).unwrap().with_labels(labels).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_parts() {
        let dims = ModelDims::toy();
        let mut model = Model::init(&dims, 1).unwrap();
        model.params.fill_prefix("shape.", 0.0);
        let e = encode_shape(&labelled(0, 300), &model).unwrap();
        assert!(e.part_features.data().iter().all(|&v| v == 0.0));
        assert_eq!(e.part_ids, vec![0, 1]);
    }

    #[test]
    fn unlabelled_cloud_is_one_part() {
        let dims = ModelDims::toy();
        let model = Model::init(&dims, 1).unwrap();
        let c = PointCloud::new(labelled(2, 100).positions().to_vec()).unwrap();
        let e = encode_shape(&c, &model).unwrap();
        assert_eq!(e.part_features.shape(), &[1, dims.embed_dim]);
    }

    #[test]
    fn tiny_cloud() {
        let model = Model::init(&ModelDims::toy(), 1).unwrap();
        let c = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(encode_shape(&c, &model).unwrap().part_features.rows(), 1);
    }

    #[test]
    fn permutation_invariant() {
        let model = Model::init(&ModelDims::toy(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..3 {
            let c = labelled(seed, 400);
            let mut order: Vec<usize> = (0..c.len()).collect();
            order.shuffle(&mut rng);
            let a = encode_shape(&c, &model).unwrap();
            let b = encode_shape(&c.permuted(&order).unwrap(), &model).unwrap();
            assert!(a.part_features.max_abs_diff(&b.part_features) < 1e-9);
            assert_eq!(a.part_ids, b.part_ids);
        }
    }
}
