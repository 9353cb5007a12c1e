use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

fn non_empty(t: &Tensor, what: &str) -> Result<()> {
    if t.numel() == 0 {
        return Err(Error::Input(format!("{what} scores are empty")));
    }
    Ok(())
}

/// `mean(max(0, 1 - real)) + mean(max(0, 1 + fake))`, the negation of the
/// margin objective the discriminator maximizes. Always `>= 0`.
pub fn hinge_d_loss(real: &Tensor, fake: &Tensor) -> Result<f32> {
    non_empty(real, "real")?;
    non_empty(fake, "fake")?;
    let r = real.data().iter().map(|&x| (1.0 - x).max(0.0)).sum::<f32>() / real.numel() as f32;
    let f = fake.data().iter().map(|&x| (1.0 + x).max(0.0)).sum::<f32>() / fake.numel() as f32;
    Ok(r + f)
}

/// `-mean(fake)`.
pub fn hinge_g_loss(fake: &Tensor) -> Result<f32> {
    non_empty(fake, "fake")?;
    Ok(-fake.mean())
}

pub(crate) fn hinge_d_loss_graph(g: &mut Graph, real: Var, fake: Var) -> Var {
    let neg_real = g.scale(real, -1.0);
    let r = g.add_scalar(neg_real, 1.0);
    let r = g.relu(r);
    let r = g.mean_all(r);
    let f = g.add_scalar(fake, 1.0);
    let f = g.relu(f);
    let f = g.mean_all(f);
    g.add(r, f).expect("scalar shapes match")
}

pub(crate) fn hinge_g_loss_graph(g: &mut Graph, fake: Var) -> Var {
    let m = g.mean_all(fake);
    g.scale(m, -1.0)
}
