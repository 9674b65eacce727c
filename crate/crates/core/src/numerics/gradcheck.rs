use crate::error::{GraceError, Result};
use crate::numerics::{Matrix, Tape, Var};

/// Worst relative error between tape gradients and central differences, per input block.
///
/// `f` builds a scalar on a fresh tape from one leaf per block. The relative
/// error of an entry is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check_blocks<F>(f: F, inputs: &[Matrix], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(GraceError::InvalidArgument(format!(
            "step {h:e} outside [1e-7, 1e-3]"
        )));
    }
    let eval = |blocks: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = blocks.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.scalar(out).is_finite() {
        return Err(GraceError::NonFinite(
            "function value at the base point".into(),
        ));
    }
    let grads = tape.backward(out)?;

    let mut worst = Vec::with_capacity(inputs.len());
    let mut offset = 0;
    let mut probe: Vec<Matrix> = inputs.to_vec();
    for (b, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        let mut block_worst: f64 = 0.0;
        for k in 0..inputs[b].len() {
            let base = inputs[b].as_slice()[k];
            probe[b].as_mut_slice()[k] = base + h;
            let plus = eval(&probe)?;
            probe[b].as_mut_slice()[k] = base - h;
            let minus = eval(&probe)?;
            probe[b].as_mut_slice()[k] = base;
            if !plus.is_finite() {
                return Err(GraceError::NonFiniteProbe {
                    index: offset + k,
                    sign: '+',
                });
            }
            if !minus.is_finite() {
                return Err(GraceError::NonFiniteProbe {
                    index: offset + k,
                    sign: '-',
                });
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.as_slice()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            block_worst = block_worst.max((a - numeric).abs() / denom);
        }
        worst.push(block_worst);
        offset += inputs[b].len();
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_blocks`].
pub fn grad_check<F>(f: F, x: &Matrix, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let errs = grad_check_blocks(|t, vs| f(t, vs[0]), std::slice::from_ref(x), h)?;
    Ok(errs[0])
}
