//! Built-in experiment presets covering the reference sweeps: the reaction
//! coefficient eigenvalue table, mesh/coefficient independence, and the
//! iteration-count sweeps for both solution paths.

use crate::config::{
    DiscConfig, ExperimentConfig, FnConfig, OutputConfig, ProblemConfig, SolverConfig,
    SweepConfig, TargetConfig,
};
use parabolic_control::problem::SolveMethod;
use parabolic_control::saddle::{SaddleVariant, WMode};

fn cos_fn(freq: f64) -> FnConfig {
    FnConfig {
        name: "cos_product".into(),
        freq: Some(freq),
        value: None,
    }
}

fn base_problem(lambda: f64, c: f64) -> ProblemConfig {
    ProblemConfig {
        dim: 1,
        t_final: 1.0,
        lambda,
        alpha: 1.0,
        c,
        y0: cos_fn(1.0),
        target: Some(TargetConfig {
            kind: "end_time".into(),
            function: cos_fn(2.0),
        }),
    }
}

fn config(
    problem: ProblemConfig,
    n_elems: usize,
    n_steps: usize,
    solver: SolverConfig,
    sweep: Option<SweepConfig>,
) -> ExperimentConfig {
    ExperimentConfig {
        problem,
        discretization: DiscConfig {
            n_elems: Some(n_elems),
            n_per_side: None,
            n_steps,
            taus: None,
        },
        solver,
        sweep,
        output: OutputConfig::default(),
    }
}

fn eig_solver() -> SolverConfig {
    SolverConfig {
        method: SolveMethod::Eig,
        tol: 1e-11,
        ..SolverConfig::default()
    }
}

fn minres_solver() -> SolverConfig {
    SolverConfig {
        method: SolveMethod::AllAtOnce,
        variant: SaddleVariant::Sym,
        w_mode: WMode::Approx,
        tol: 1e-12,
        max_iters: 3000,
    }
}

/// (name, description, configuration) for every built-in preset.
pub fn presets() -> Vec<(&'static str, &'static str, ExperimentConfig)> {
    vec![
        (
            "c-eig-sweep",
            "largest reduced eigenvalue vs reaction coefficient (reference table)",
            config(
                base_problem(1.0, 1.0),
                63,
                1000,
                eig_solver(),
                Some(SweepConfig {
                    parameter: "c".into(),
                    values: vec![100.0, 10.0, 1.0, -1.0],
                }),
            ),
        ),
        (
            "mesh-independence",
            "largest reduced eigenvalue vs spatial resolution (must be flat)",
            config(
                base_problem(1.0, 1.0),
                63,
                500,
                eig_solver(),
                Some(SweepConfig {
                    parameter: "n_elems".into(),
                    values: vec![15.0, 31.0, 63.0, 127.0],
                }),
            ),
        ),
        (
            "alpha-independence",
            "largest reduced eigenvalue vs diffusion coefficient (must be flat)",
            config(
                base_problem(1.0, 1.0),
                63,
                500,
                eig_solver(),
                Some(SweepConfig {
                    parameter: "alpha".into(),
                    values: vec![0.0, 0.1, 1.0, 10.0, 100.0],
                }),
            ),
        ),
        (
            "lambda-cg-sweep",
            "weighted-CG iteration growth as the control weight shrinks (2D)",
            ExperimentConfig {
                problem: ProblemConfig {
                    dim: 2,
                    ..base_problem(1.0, -5.0)
                },
                discretization: DiscConfig {
                    n_elems: None,
                    n_per_side: Some(24),
                    n_steps: 50,
                    taus: None,
                },
                solver: SolverConfig {
                    max_iters: 3000,
                    ..SolverConfig::default()
                },
                sweep: Some(SweepConfig {
                    parameter: "lambda".into(),
                    values: vec![1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
                }),
                output: OutputConfig::default(),
            },
        ),
        (
            "n-cg-sweep",
            "weighted-CG iterations vs number of time steps (must be flat)",
            config(
                base_problem(1e-3, -5.0),
                127,
                100,
                SolverConfig::default(),
                Some(SweepConfig {
                    parameter: "n_steps".into(),
                    values: vec![50.0, 100.0, 200.0, 400.0],
                }),
            ),
        ),
        (
            "n-minres-sweep",
            "preconditioned MINRES iterations vs number of time steps (must be flat)",
            config(
                base_problem(1e-3, -5.0),
                127,
                100,
                minres_solver(),
                Some(SweepConfig {
                    parameter: "n_steps".into(),
                    values: vec![20.0, 50.0, 100.0, 200.0],
                }),
            ),
        ),
        (
            "lambda-minres-sweep",
            "preconditioned MINRES iterations vs control weight (nearly constant until ~5e-2)",
            config(
                base_problem(1.0, -5.0),
                127,
                100,
                minres_solver(),
                Some(SweepConfig {
                    parameter: "lambda".into(),
                    values: vec![100.0, 10.0, 1.0, 0.1, 0.05],
                }),
            ),
        ),
        (
            "c-minres-sweep",
            "preconditioned MINRES iterations vs reaction coefficient (grows as c drops)",
            config(
                base_problem(1e-2, -5.0),
                127,
                100,
                minres_solver(),
                Some(SweepConfig {
                    parameter: "c".into(),
                    values: vec![10.0, 5.0, 1.0, 0.0, -1.0, -3.0, -5.0, -8.0],
                }),
            ),
        ),
    ]
}

pub fn find_preset(name: &str) -> Option<ExperimentConfig> {
    presets()
        .into_iter()
        .find(|(n, _, _)| *n == name)
        .map(|(_, _, cfg)| cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_round_trip_through_the_parser() {
        for (name, _, cfg) in presets() {
            let text = serde_json::to_string(&cfg).unwrap();
            let parsed = crate::config::parse_config_str(&text)
                .unwrap_or_else(|e| panic!("preset {name}: {e}"));
            assert_eq!(parsed, cfg, "{name}");
        }
    }

    #[test]
    fn lookup_by_name() {
        assert!(find_preset("c-eig-sweep").is_some());
        assert!(find_preset("nope").is_none());
    }
}
