mod common;

use common::*;
use distg::engine::conv::{conv2d_forward, conv3d_forward};
use distg::engine::{Conv2dSpec, Conv3dSpec};
use proptest::prelude::*;

#[derive(Clone, Debug)]
struct Geometry {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: [usize; 2],
    stride: [usize; 2],
    dilation: [usize; 2],
    pad_lo: [usize; 2],
    pad_hi: [usize; 2],
}

impl Geometry {
    fn spec(&self) -> Conv2dSpec {
        Conv2dSpec::new(self.cin, self.cout, self.k)
            .with_stride(self.stride)
            .with_dilation(self.dilation)
            .with_asymmetric_padding(self.pad_lo, self.pad_hi)
    }

    fn fits(&self) -> bool {
        let span = |a: usize| self.dilation[a] * (self.k[a] - 1) + 1;
        self.h + self.pad_lo[0] + self.pad_hi[0] >= span(0) && self.w + self.pad_lo[1] + self.pad_hi[1] >= span(1)
    }
}

fn geometry() -> impl Strategy<Value = Geometry> {
    (
        (1usize..=2, 1usize..=3, 1usize..=12, 1usize..=12),
        (1usize..=3, 1usize..=3),
        (1usize..=3, 1usize..=3),
        (1usize..=9, 1usize..=9),
        (0usize..=28, 0usize..=28, 0usize..=28, 0usize..=28),
    )
        .prop_map(|((cin, cout, h, w), (k0, k1), (s0, s1), (d0, d1), (p0, p1, p2, p3))| Geometry {
            cin,
            cout,
            h,
            w,
            k: [k0, k1],
            stride: [s0, s1],
            dilation: [d0, d1],
            pad_lo: [p0, p1],
            pad_hi: [p2, p3],
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn conv2d_matches_nested_loops(g in geometry(), seed in any::<u64>()) {
        prop_assume!(g.fits());
        let mut r = rng(seed);
        let spec = g.spec();
        let x = random::<f64>(&mut r, &[2, g.cin, g.h, g.w]);
        let w = random::<f64>(&mut r, &spec.weight_shape());
        let b = random::<f64>(&mut r, &[g.cout]);
        let want = naive_conv2d(&x, &w, Some(&b), g.stride, g.dilation, g.pad_lo, g.pad_hi);
        let got = conv2d_forward(&x, &w, Some(&b), &spec).unwrap();
        prop_assert_eq!(got.shape(), want.shape());
        prop_assert!(max_abs_diff(&got, &want) <= 1e-12);

        let got32 = conv2d_forward(&x.cast::<f32>(), &w.cast::<f32>(), Some(&b.cast::<f32>()), &spec).unwrap();
        let want32 = naive_conv2d(&x.cast::<f32>(), &w.cast::<f32>(), Some(&b.cast::<f32>()), g.stride, g.dilation, g.pad_lo, g.pad_hi);
        prop_assert!(max_abs_diff(&got32, &want32) <= 1e-6);
    }

    #[test]
    fn conv2d_output_extent_formula(g in geometry()) {
        let spec = g.spec();
        match spec.output_extent([g.h, g.w]) {
            Ok([oh, ow]) => {
                prop_assert!(g.fits());
                let x = distg::Tensor::<f32>::zeros(&[1, g.cin, g.h, g.w]);
                let y = conv2d_forward(&x, &distg::Tensor::zeros(&spec.weight_shape()), None, &spec).unwrap();
                prop_assert_eq!(y.shape(), &[1, g.cout, oh, ow]);
            }
            Err(_) => prop_assert!(!g.fits()),
        }
    }

    #[test]
    fn conv3d_matches_nested_loops(
        (d, h, w) in (1usize..=5, 1usize..=6, 1usize..=6),
        k in 1usize..=3,
        stride in 1usize..=2,
        dilation in 1usize..=2,
        pad in 0usize..=2,
        seed in any::<u64>(),
    ) {
        let span = dilation * (k - 1) + 1;
        prop_assume!(d + 2 * pad >= span && h + 2 * pad >= span && w + 2 * pad >= span);
        let mut r = rng(seed);
        let spec = Conv3dSpec::new(2, 2, [k, k, k])
            .with_stride([stride; 3])
            .with_dilation([dilation; 3])
            .with_padding([pad; 3]);
        let x = random::<f64>(&mut r, &[1, 2, d, h, w]);
        let wt = random::<f64>(&mut r, &spec.weight_shape());
        let b = random::<f64>(&mut r, &[2]);
        let got = conv3d_forward(&x, &wt, Some(&b), &spec).unwrap();
        let want = naive_conv3d(&x, &wt, Some(&b), [stride; 3], [dilation; 3], [pad; 3]);
        prop_assert!(max_abs_diff(&got, &want) <= 1e-12);
    }
}
