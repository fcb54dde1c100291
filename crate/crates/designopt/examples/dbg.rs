use designopt::criteria::{compile, extract_design};
use designopt::linalg::Matrix;
use designopt::model::{Criterion, DesignPoint, ObservationModel};
use designopt::oracle::phi_direct;
use designopt::solver::{solve, SolverConfig};
use designopt::workbench::{grid_x1_levels, quadratic_grid_model, relax_domain, uranium_domain};

fn grid_model_map(f: impl Fn(f64, f64) -> Vec<f64>, m: usize) -> ObservationModel {
    let mut points = Vec::new();
    for &x1 in &grid_x1_levels() {
        for x2 in [0.0, 10.0, 20.0] {
            points.push(DesignPoint { label: format!("({x1},{x2})"), matrix: Matrix::col_vec(&f(x1, x2)) });
        }
    }
    ObservationModel::new(m, points).unwrap()
}

fn main() {
    let model = quadratic_grid_model(true);
    let domain = relax_domain(&uranium_domain(false));
    let cp = compile(&model, &Criterion::d(), &domain).unwrap();
    let sol = solve(&cp.program, &SolverConfig::default());
    let d = extract_design(&cp, &sol, &model, &Criterion::d());
    let w = &d.weights;
    println!("phi rescaled counts    : {:.4}", d.phi);

    let orig = quadratic_grid_model(false);
    println!("phi original counts    : {:.4}", phi_direct(&Criterion::d(), &orig, w));
    let wn: Vec<f64> = w.iter().map(|v| v / 392.0).collect();
    println!("phi original fractions : {:.4}", phi_direct(&Criterion::d(), &orig, &wn));
    println!("phi rescaled fractions : {:.4}", phi_direct(&Criterion::d(), &model, &wn));
    // x2 in percent units {0,1,2}
    let pct = grid_model_map(|x1, x2| {
        let u2 = x2 / 10.0;
        vec![1.0, x1, u2, x1 * x1, u2 * u2, x1 * u2]
    }, 6);
    println!("phi x2/10 counts       : {:.4}", phi_direct(&Criterion::d(), &pct, w));
    // x1 shifted only (centered, not scaled)
    let cent = grid_model_map(|x1, x2| {
        let u1 = x1 - 95.8;
        vec![1.0, u1, x2, u1 * u1, x2 * x2, u1 * x2]
    }, 6);
    println!("phi x1-centered counts : {:.4}", phi_direct(&Criterion::d(), &cent, w));
    let cent2 = grid_model_map(|x1, x2| {
        let u1 = x1 - 95.8;
        let u2 = x2 - 10.0;
        vec![1.0, u1, u2, u1 * u1, u2 * u2, u1 * u2]
    }, 6);
    println!("phi both-centered      : {:.4}", phi_direct(&Criterion::d(), &cent2, w));
}
