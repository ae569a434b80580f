//! GLR density and gradient estimates against the closed forms.
//!
//! `cargo run --release --example glr_check`

use nmts::glr::unbiasedness_check;
use nmts::rng::{stream, Stream};
use nmts::{LinearLatentModel, LocationModel};

fn main() -> nmts::Result<()> {
    let draws = 1_000_000;
    let checks = [
        ("location", unbiasedness_check(&LocationModel, &[0.3], 1.0, draws, &mut stream(1, Stream::Inner))?),
        ("linear-latent", unbiasedness_check(&LinearLatentModel, &[1.0], 0.5, draws, &mut stream(2, Stream::Inner))?),
    ];
    for (name, c) in checks {
        println!("{name} at theta = {:?}, y = {}:", c.theta, c.y);
        println!("  density   {:.5} +- {:.5}  exact {:.5}", c.g2_mean, c.g2_stderr, c.density);
        println!("  gradient  {:.5} +- {:.5}  exact {:.5}", c.g1_mean[0], c.g1_stderr[0], c.density_grad[0]);
        println!("  max |z| = {:.2}", c.max_z());
    }
    Ok(())
}
