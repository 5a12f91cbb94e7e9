use super::{NumericError, ParamSet, Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor: components where both gradients are below this are
    /// effectively compared in absolute terms.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-3, floor: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index of the worst component.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares tape gradients of the scalar built by `f` against central finite
/// differences, perturbing every entry of every parameter in `params`.
///
/// Runs in `f64`; callers holding `f32` weights cast with
/// [`ParamSet::cast`] first.
pub fn grad_check<F>(params: &ParamSet<f64>, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport, NumericError>
where
    F: for<'a> Fn(&mut Tape<'a, f64>) -> Result<Var, NumericError>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape)?;
        if tape.shape(loss) != [1, 1] {
            return Err(NumericError::Shape("grad_check needs a scalar function".into()));
        }
        tape.backward(loss).params(&tape)
    };
    let eval = |p: &ParamSet<f64>| -> Result<f64, NumericError> {
        let mut tape = Tape::new(p);
        let loss = f(&mut tape)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut shadow = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, worst: None, checked: 0 };
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let len = params.get(&name).map_or(0, |t| t.len());
        for i in 0..len {
            let orig = params.get(&name).expect("listed").data()[i];
            shadow.get_mut(&name).expect("listed").data_mut()[i] = orig + cfg.step;
            let up = eval(&shadow)?;
            shadow.get_mut(&name).expect("listed").data_mut()[i] = orig - cfg.step;
            let down = eval(&shadow)?;
            shadow.get_mut(&name).expect("listed").data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * cfg.step);
            let exact = analytic.get(&name).map_or(0.0, |g| g.data()[i]);
            let abs = (numeric - exact).abs();
            let rel = abs / numeric.abs().max(exact.abs()).max(cfg.floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
