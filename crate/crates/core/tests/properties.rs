use proptest::prelude::*;
use sigseg_core::loss::{dice_loss, soft_dice};
use sigseg_core::nn::{binarize, DEFAULT_THRESHOLD};
use sigseg_core::ops;
use sigseg_core::{Shape, Tensor};

fn tensor(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-4.0f32..4.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sigmoid_stays_strictly_inside_unit_interval(v in prop::collection::vec(-200.0f32..200.0, 1..64)) {
        let n = v.len();
        let t = Tensor::from_vec(Shape::new(1, 1, 1, n), v).unwrap();
        for &p in ops::sigmoid(&t).data() {
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn relu_is_idempotent_and_nonnegative(v in tensor(24)) {
        let t = Tensor::from_vec(Shape::new(1, 2, 3, 4), v).unwrap();
        let r = ops::relu(&t);
        prop_assert!(r.data().iter().all(|&x| x >= 0.0));
        prop_assert_eq!(ops::relu(&r), r);
    }

    #[test]
    fn dice_loss_is_one_minus_soft_dice(p in prop::collection::vec(0.0f32..1.0, 16), t in prop::collection::vec(0u8..2, 16)) {
        let pred = Tensor::from_vec(Shape::new(1, 1, 4, 4), p).unwrap();
        let truth = Tensor::from_vec(Shape::new(1, 1, 4, 4), t.into_iter().map(f32::from).collect()).unwrap();
        let d = soft_dice(&pred, &truth, 1.0).unwrap();
        let l = dice_loss(&pred, &truth, 1.0).unwrap();
        prop_assert!((l - (1.0 - d)).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&l));
    }

    #[test]
    fn soft_dice_symmetric_for_binary_pred(a in prop::collection::vec(0u8..2, 16), b in prop::collection::vec(0u8..2, 16)) {
        let mk = |v: Vec<u8>| Tensor::from_vec(Shape::new(1, 1, 4, 4), v.into_iter().map(f32::from).collect()).unwrap();
        let (a, b) = (mk(a), mk(b));
        prop_assert_eq!(soft_dice(&a, &b, 1.0).unwrap(), soft_dice(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn binarize_matches_elementwise_rule(v in prop::collection::vec(0.0f32..1.0, 32)) {
        let t = Tensor::from_vec(Shape::new(1, 1, 4, 8), v.clone()).unwrap();
        let b = binarize(&t, DEFAULT_THRESHOLD);
        for (x, y) in v.iter().zip(b.data()) {
            prop_assert_eq!(*y, if *x > 0.5 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn concat_places_first_operand_first(a in tensor(8), b in tensor(12)) {
        let ta = Tensor::from_vec(Shape::new(1, 2, 2, 2), a.clone()).unwrap();
        let tb = Tensor::from_vec(Shape::new(1, 3, 2, 2), b.clone()).unwrap();
        let c = ops::concat_channels(&ta, &tb).unwrap();
        prop_assert_eq!(c.shape(), Shape::new(1, 5, 2, 2));
        prop_assert_eq!(&c.data()[..8], a.as_slice());
        prop_assert_eq!(&c.data()[8..], b.as_slice());
    }
}

#[test]
fn apply_mask_checkerboard_matches_oracle() {
    use sigseg_core::nn::apply_mask;
    let img = Tensor::uniform(Shape::new(1, 3, 4, 4), 0.0, 1.0, 6);
    let mask = Tensor::from_vec(
        Shape::new(1, 1, 4, 4),
        (0..16).map(|i| ((i / 4 + i % 4) % 2) as f32).collect(),
    )
    .unwrap();
    let out = apply_mask(&img, &mask, 1.0).unwrap();
    for c in 0..3 {
        for y in 0..4 {
            for x in 0..4 {
                let want = if (x + y) % 2 == 1 { img.at(0, c, y, x) } else { 1.0 };
                assert_eq!(out.at(0, c, y, x), want);
            }
        }
    }
}

#[test]
fn concat_rejects_spatial_mismatch() {
    let a = Tensor::zeros(Shape::new(1, 1, 2, 2));
    let b = Tensor::zeros(Shape::new(1, 1, 2, 3));
    assert!(ops::concat_channels(&a, &b).is_err());
}
