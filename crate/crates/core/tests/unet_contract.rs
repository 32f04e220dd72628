mod support;

use cfos_core::nn::{Network, Tensor4};
use cfos_core::unet::{build_unet, unet_layers, UNetConfig};
use support::fitting::overfit_four;

#[test]
fn default_unet_maps_128_to_128_through_8x8() {
    let cfg = UNetConfig::default();
    let (_, bottleneck) = unet_layers(&cfg).unwrap();
    let mut net = Network::new(build_unet(&cfg, 3).unwrap());
    let x = Tensor4::filled([1, 128, 128, 1], 0.5f32);
    assert_eq!(net.forward(&x).unwrap().dims(), [1, 128, 128, 1]);
    let b = net.activation(bottleneck).unwrap();
    assert_eq!((b.height(), b.width()), (8, 8));
}

#[test]
fn four_tiles_overfit_within_500_steps() {
    let cfg = UNetConfig {
        input: 64,
        base_channels: 8,
        ..UNetConfig::default()
    };
    let trace = overfit_four(&cfg, 3e-3, 500, 0.01);
    let last = *trace.last().unwrap();
    assert!(last < 0.01, "loss {last} after {} steps", trace.len());
}
