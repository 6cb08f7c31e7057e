//! A small differentiable compute core: dense 4D tensors, the layers of a
//! compact residual encoder with hand-written backward passes, and SGD with
//! momentum.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod param;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use layers::{
    global_avg_pool, global_avg_pool_backward, residual_add, BatchNorm2d, Conv2d, L2Normalize, Linear, MaxPool2, Relu,
};
pub use param::{sgd_step, ParamId, ParamSet, SgdConfig};
pub use tensor::{Real, Tensor4};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> crate::seed::Rng {
        crate::seed::Rng::seed_from_u64(42)
    }

    #[test]
    fn one_by_one_identity_conv_copies_input() {
        let mut ps = ParamSet::<f32>::new();
        let conv = Conv2d::new(&mut ps, "c", 3, 3, 1, 1, 0, true, &mut rng());
        let w = ps.value_mut(conv.weight);
        w.fill(0.0);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let x = Tensor4::from_vec([2, 3, 4, 5], (0..120).map(|v| v as f32 / 7.0).collect()).unwrap();
        assert_eq!(conv.infer(&ps, &x).unwrap(), x);
    }

    #[test]
    fn zero_weight_conv_gives_zero_output_and_gradient() {
        let mut ps = ParamSet::<f32>::new();
        let mut conv = Conv2d::new(&mut ps, "c", 2, 3, 3, 1, 1, false, &mut rng());
        ps.value_mut(conv.weight).fill(0.0);
        let x = Tensor4::filled([2, 2, 5, 5], 0.7f32);
        let y = conv.forward(&ps, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let dx = conv.backward(&mut ps, &Tensor4::filled(y.shape(), 1.0)).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    /// Direct convolution: `y[n][o][oy][ox] = sum w[o][c][ky][kx] * x[n][c][oy*s+ky-p][ox*s+kx-p]`.
    fn direct_conv(x: &Tensor4<f64>, w: &Tensor4<f64>, s: usize, p: usize, ho: usize, wo: usize) -> Tensor4<f64> {
        let [n, c, h, wd] = x.shape();
        let [o, _, k, _] = w.shape();
        let mut y = Tensor4::zeros([n, o, ho, wo]);
        for ni in 0..n {
            for oi in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += w.data()[((oi * c + ci) * k + ky) * k + kx]
                                            * x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                    }
                                }
                            }
                        }
                        y.data_mut()[((ni * o + oi) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_oracle_forward_and_input_gradient() {
        use rand::Rng;
        let mut r = rng();
        for (k, s, p, h, w) in [(3, 1, 1, 7, 6), (3, 2, 1, 8, 9), (1, 2, 0, 5, 5), (3, 2, 0, 9, 7), (5, 3, 2, 11, 8)] {
            let mut ps = ParamSet::<f64>::new();
            let mut conv = Conv2d::new(&mut ps, "c", 2, 3, k, s, p, false, &mut r);
            let x = Tensor4::from_vec([2, 2, h, w], (0..4 * h * w).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
            let y = conv.forward(&ps, &x).unwrap();
            let (ho, wo) = conv.output_hw(h, w).unwrap();
            let expect = direct_conv(&x, ps.value(conv.weight), s, p, ho, wo);
            for (a, b) in y.data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            // Input gradient of sum(g * y) equals the oracle's directional response.
            let g = Tensor4::from_vec(y.shape(), (0..y.len()).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
            let dx = conv.backward(&mut ps, &g).unwrap();
            let wt = ps.value(conv.weight).clone();
            for j in 0..x.len() {
                let mut e = Tensor4::zeros(x.shape());
                e.data_mut()[j] = 1.0;
                let resp = direct_conv(&e, &wt, s, p, ho, wo);
                let d: f64 = resp.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                assert!((dx.data()[j] - d).abs() < 1e-12, "k={k} s={s} p={p} j={j}");
            }
        }
    }

    #[test]
    fn conv_rejects_wrong_channel_count() {
        let mut ps = ParamSet::<f32>::new();
        let conv = Conv2d::new(&mut ps, "c", 3, 4, 3, 1, 1, false, &mut rng());
        let err = conv.infer(&ps, &Tensor4::zeros([1, 2, 8, 8])).unwrap_err();
        assert!(matches!(err, crate::Error::Shape(_)));
    }

    #[test]
    fn batchnorm_training_output_is_standardized() {
        use rand::Rng;
        let mut r = rng();
        let mut ps = ParamSet::<f64>::new();
        let mut bn = BatchNorm2d::new(&mut ps, "bn", 3);
        let x = Tensor4::from_vec([4, 3, 4, 4], (0..192).map(|_| r.gen_range(-3.0..5.0)).collect()).unwrap();
        let y = bn.forward(&mut ps, &x).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|n| y.item(n)[c * 16..(c + 1) * 16].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn batchnorm_eval_with_unit_stats_is_identity() {
        let mut ps = ParamSet::<f32>::new();
        let bn = BatchNorm2d::new(&mut ps, "bn", 2);
        let x = Tensor4::from_vec([1, 2, 2, 2], vec![0.5, -1.0, 0.75, 0.3, -0.25, 0.0, 1.0, -0.9]).unwrap();
        let y = bn.infer(&ps, &x).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_rejects_single_item_batches_in_training() {
        let mut ps = ParamSet::<f32>::new();
        let mut bn = BatchNorm2d::new(&mut ps, "bn", 1);
        assert!(matches!(
            bn.forward(&mut ps, &Tensor4::zeros([1, 1, 2, 2])),
            Err(crate::Error::Numeric(_))
        ));
    }

    #[test]
    fn relu_values_and_mask() {
        let x = Tensor4::from_vec([1, 3, 1, 1], vec![-1.0f32, 0.0, 2.0]).unwrap();
        let mut relu = Relu::default();
        assert_eq!(relu.forward(&x).data(), &[0.0, 0.0, 2.0]);
        let dx = relu.backward(&Tensor4::filled([1, 3, 1, 1], 1.0f32)).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_ties_route_to_first_index() {
        let x = Tensor4::filled([1, 1, 2, 2], 1.0f32);
        let mut pool = MaxPool2::default();
        pool.forward(&x).unwrap();
        let dx = pool.backward(&Tensor4::filled([1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn global_average_of_constant() {
        let x = Tensor4::filled([2, 3, 4, 4], 0.625f32);
        assert!(global_avg_pool(&x).data().iter().all(|&v| v == 0.625));
    }

    #[test]
    fn l2_normalize_examples() {
        let x = Tensor4::from_vec([3, 2, 1, 1], vec![3.0f64, 4.0, 0.6, 0.8, 0.0, 0.0]).unwrap();
        let y = L2Normalize::infer(&x);
        let expect = [0.6, 0.8, 0.6, 0.8, 0.0, 0.0];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
