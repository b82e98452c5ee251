use std::io::Write;

use betakde::simulate::{run_simulation, Cell, SelectorKind, SimulationConfig};
use betakde::{gaussian_kernel, BetaParam};

fn beta(b: f64) -> BetaParam {
    BetaParam::new(b).unwrap()
}

fn config(cells: Vec<Cell>, reps: usize) -> SimulationConfig {
    SimulationConfig {
        cells,
        reps,
        selectors: vec![
            SelectorKind::NormalReference(beta(2.0)),
            SelectorKind::CrossValidation { beta: beta(2.0), loo_bias_reduced: false },
            SelectorKind::CrossValidation { beta: beta(1.5), loo_bias_reduced: false },
        ],
        seed: 42,
    }
}

#[test]
fn identical_configs_give_identical_tables() {
    let c = config(vec![Cell::new(1.0, 0.5, 50), Cell::new(5.0, 0.1, 50)], 4);
    let k = gaussian_kernel();
    let a = run_simulation(&c, &k).unwrap().table;
    let b = run_simulation(&c, &k).unwrap().table;
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 6);
}

#[test]
fn mean_bandwidth_shrinks_with_n_and_re_is_bounded() {
    let mut cells = Vec::new();
    for (mu, sigma) in [(0.0, 1.0), (1.0, 1.0)] {
        for n in [50, 200, 700] {
            cells.push(Cell::new(mu, sigma, n));
        }
    }
    let c = config(cells.clone(), 40);
    let out = run_simulation(&c, &gaussian_kernel()).unwrap();
    let names: Vec<String> = c.selectors.iter().map(SelectorKind::name).collect();
    let mut log = String::new();
    for row in &out.table.rows {
        assert!(row.re > 0.0 && row.re <= 1.0 + 3.0 * row.re_se, "{row:?}");
        log.push_str(&format!(
            "{} {}: RE {:.3} meanH {:.4} hMISE {:.4} relErr {:.3}\n",
            row.cell.key(),
            row.selector,
            row.re,
            row.mean_h,
            row.h_mise,
            row.mean_rel_err
        ));
    }
    let _ = std::io::stderr().write_all(log.as_bytes());
    for chunk in cells.chunks(3) {
        for name in &names {
            let h: Vec<f64> = chunk.iter().map(|c| out.table.row(c, name).unwrap().mean_h).collect();
            assert!(h[0] > h[1] && h[1] > h[2], "{name} {:?}: {h:?}", chunk[0]);
        }
        let h_mise: Vec<f64> = chunk.iter().map(|c| out.table.row(c, &names[0]).unwrap().h_mise).collect();
        assert!(h_mise[0] > h_mise[1] && h_mise[1] > h_mise[2], "{h_mise:?}");
    }
}
