//! Model complexity accounting: parameter counts and forward GFLOPs.
//!
//! Convention, held fixed across every reported table: convolution and
//! linear layers count one operation per multiply-accumulate
//! (`k^2 * C_in * C_out * H_out * W_out`), and bias, normalization,
//! activation, pooling-window, upsampling, and residual work count one
//! operation per element. This calibration reproduces the published
//! complexity columns for the small CSP baseline.

use crate::nn::Cost;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct ComplexityRow {
    pub name: String,
    pub params: usize,
    pub gflops: f64,
    /// Rows that exist only in training graphs (the SR branch).
    pub training_only: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComplexityReport {
    /// Input side length the FLOPs are reported at.
    pub input_size: usize,
    pub rows: Vec<ComplexityRow>,
    /// Inference totals (training-only rows excluded).
    pub total_params: usize,
    pub total_gflops: f64,
    /// Training totals (all rows).
    pub train_params: usize,
    pub train_gflops: f64,
}

impl ComplexityReport {
    pub fn from_rows(input_size: usize, rows: Vec<ComplexityRow>) -> Self {
        let total_params = rows.iter().filter(|r| !r.training_only).map(|r| r.params).sum();
        let total_gflops = rows
            .iter()
            .filter(|r| !r.training_only)
            .map(|r| r.gflops)
            .sum();
        let train_params = rows.iter().map(|r| r.params).sum();
        let train_gflops = rows.iter().map(|r| r.gflops).sum();
        ComplexityReport {
            input_size,
            rows,
            total_params,
            total_gflops,
            train_params,
            train_gflops,
        }
    }

    pub fn params_m(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    /// Aligned text table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<16} {:>12} {:>12}  {}\n",
            "module", "params", "gflops", "notes"
        ));
        for r in &self.rows {
            s.push_str(&format!(
                "{:<16} {:>12} {:>12.4}  {}\n",
                r.name,
                r.params,
                r.gflops,
                if r.training_only { "training-only" } else { "" }
            ));
        }
        s.push_str(&format!(
            "{:<16} {:>12} {:>12.4}  inference @ {}x{}\n",
            "total",
            self.total_params,
            self.total_gflops,
            self.input_size,
            self.input_size
        ));
        s.push_str(&format!(
            "{:<16} {:>12} {:>12.4}  training @ {}x{}\n",
            "total+sr",
            self.train_params,
            self.train_gflops,
            self.input_size,
            self.input_size
        ));
        s.push_str(&format!(
            "Params {:.4}M  GFLOPs {:.2}\n",
            self.params_m(),
            self.total_gflops
        ));
        s
    }

    /// Machine-readable CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("module,params,gflops,training_only\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.6},{}\n",
                r.name, r.params, r.gflops, r.training_only
            ));
        }
        s.push_str(&format!(
            "total,{},{:.6},false\n",
            self.total_params, self.total_gflops
        ));
        s
    }
}

pub fn row(name: impl Into<String>, params: usize, cost: Cost, training_only: bool) -> ComplexityRow {
    ComplexityRow {
        name: name.into(),
        params,
        gflops: cost.gflops(),
        training_only,
    }
}
