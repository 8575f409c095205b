use std::collections::BTreeMap;
use std::path::Path;

use stratkit::adjust::{adjusted_ate, adjusted_late, Basis, BasisSpec};
use stratkit::moments::{builtin, estimate};
use stratkit::variance::{confidence_interval, vhat_fine, VarianceBreakdown, VarianceWarning};
use stratkit::{validate, BlockPartition, Rows};

use crate::table::Table;
use crate::{io_err, CliError, Result};

#[derive(Debug, Clone)]
pub struct EstimateArgs {
    pub param: String,
    pub eta: f64,
    pub y_col: String,
    pub treat_col: String,
    pub d_col: Option<String>,
    pub weight_col: Option<String>,
    pub tau: Option<f64>,
    pub block_col: Option<String>,
    pub basis: String,
    pub x_col: Option<String>,
    pub level: f64,
}

impl Default for EstimateArgs {
    fn default() -> Self {
        Self {
            param: "ate".into(),
            eta: 0.5,
            y_col: "y".into(),
            treat_col: "a".into(),
            d_col: None,
            weight_col: None,
            tau: None,
            block_col: None,
            basis: "none".into(),
            x_col: None,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub param: String,
    pub estimator: String,
    pub n: usize,
    pub theta: Vec<f64>,
    pub transformed: Option<f64>,
    pub breakdown: Option<VarianceBreakdown>,
    pub vhat: Option<f64>,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub level: f64,
    pub notes: Vec<String>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EstimateReport {
    /// One header row and one value row; absent quantities are empty cells.
    pub fn to_csv(&self) -> String {
        let mut head = vec!["param".to_string(), "estimator".into(), "n".into()];
        let mut vals = vec![self.param.clone(), self.estimator.clone(), self.n.to_string()];
        for (j, t) in self.theta.iter().enumerate() {
            head.push(format!("theta{j}"));
            vals.push(t.to_string());
        }
        head.push("transformed".into());
        vals.push(opt(self.transformed));
        let breakdown = self.breakdown.as_ref().map(VarianceBreakdown::values);
        for (j, name) in VarianceBreakdown::COLUMNS.iter().enumerate().take(8) {
            head.push((*name).into());
            vals.push(opt(breakdown.map(|b| b[j])));
        }
        head.extend(["vhat", "se", "ci_lo", "ci_hi", "level"].map(String::from));
        vals.extend([
            opt(self.vhat),
            opt(self.se),
            opt(self.ci.map(|c| c.0)),
            opt(self.ci.map(|c| c.1)),
            self.level.to_string(),
        ]);
        format!("{}\n{}\n", head.join(","), vals.join(","))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("param      {}\nestimator  {}\nn          {}\n", self.param, self.estimator, self.n);
        let theta: Vec<String> = self.theta.iter().map(f64::to_string).collect();
        out.push_str(&format!("theta      {}\n", theta.join(" ")));
        if let Some(t) = self.transformed {
            out.push_str(&format!("h(theta)   {t}\n"));
        }
        if let Some(b) = &self.breakdown {
            for (name, v) in VarianceBreakdown::COLUMNS.iter().zip(b.values()) {
                out.push_str(&format!("{name:<10} {v}\n"));
            }
        } else if let Some(v) = self.vhat {
            out.push_str(&format!("vhat       {v}\n"));
        }
        if let Some(se) = self.se {
            out.push_str(&format!("se         {se}\n"));
        }
        if let Some((lo, hi)) = self.ci {
            out.push_str(&format!("{:<10} [{lo}, {hi}]\n", format!("ci{:.0}", 100.0 * self.level)));
        }
        for note in &self.notes {
            out.push_str(&format!("note: {note}\n"));
        }
        out
    }
}

fn treatment(table: &Table, name: &str) -> Result<Vec<i64>> {
    let j = table.index(name)?;
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r[j].parse::<i64>().map_err(|_| CliError::NonNumericValue {
                column: name.to_string(),
                row: i + 1,
                value: r[j].clone(),
            })
        })
        .collect()
}

/// Groups rows by block label. Integer labels are ordered numerically,
/// anything else by first appearance; the between-block products pair
/// neighbours in this order.
fn partition(table: &Table, name: &str) -> Result<BlockPartition> {
    let labels = table.strings(name)?;
    let numeric: Option<Vec<i64>> = labels.iter().map(|l| l.parse().ok()).collect();
    let blocks: Vec<Vec<usize>> = match numeric {
        Some(ids) => {
            let mut map: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
            for (i, id) in ids.into_iter().enumerate() {
                map.entry(id).or_default().push(i);
            }
            map.into_values().collect()
        }
        None => {
            let mut order: Vec<&str> = Vec::new();
            let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, l) in labels.iter().enumerate() {
                map.entry(l).or_insert_with(|| {
                    order.push(l);
                    Vec::new()
                });
                map.get_mut(l.as_str()).expect("inserted").push(i);
            }
            order.iter().map(|l| map.remove(l).expect("present")).collect()
        }
    };
    Ok(BlockPartition::new(blocks, table.len())?)
}

fn interval(report: &mut EstimateReport, theta: f64, vhat: f64) {
    report.vhat = Some(vhat);
    match confidence_interval(theta, vhat, report.n, report.level) {
        Ok(ci) => {
            report.se = Some((vhat / report.n as f64).sqrt());
            report.ci = Some(ci);
        }
        Err(e) => report.notes.push(format!("no interval: {e}")),
    }
}

pub fn estimate_table(table: &Table, args: &EstimateArgs) -> Result<EstimateReport> {
    let param = args.param.as_str();
    let basis = Basis::parse(&args.basis)?;
    if args.block_col.is_some() && matches!(param, "qte" | "logodds") {
        return Err(stratkit::Error::NonScalarParameter(param.to_string()).into());
    }
    let need = |flag: &str, present: bool| {
        if present {
            Ok(())
        } else {
            Err(CliError::Usage(format!("--param {param} needs {flag}")))
        }
    };
    match param {
        "late" => need("--d-col", args.d_col.is_some())?,
        "wate" => need("--weight-col", args.weight_col.is_some())?,
        "qte" => need("--tau", args.tau.is_some())?,
        _ => {}
    }
    if basis.is_some() {
        if !matches!(param, "ate" | "late") {
            return Err(CliError::Usage(format!("--basis applies to ate and late, not {param}")));
        }
        need("--x-col", args.x_col.is_some())?;
        if args.block_col.is_some() {
            return Err(CliError::Usage("--block-col variance is for the unadjusted estimator; drop --basis".into()));
        }
    }

    let n = table.len();
    let y = table.numeric(&args.y_col)?;
    let a = treatment(table, &args.treat_col)?;
    let mut x_cols = Vec::new();
    if let Some(c) = &args.x_col {
        x_cols.push(table.numeric(c)?);
    }
    let weight_coordinate = match &args.weight_col {
        Some(c) if param == "wate" => {
            x_cols.push(table.numeric(c)?);
            Some(x_cols.len() - 1)
        }
        _ => None,
    };
    let x = if x_cols.is_empty() {
        Rows::column(vec![0.0; n])
    } else {
        let flat = (0..n).flat_map(|i| x_cols.iter().map(move |c| c[i])).collect();
        Rows::from_flat(x_cols.len(), flat)?
    };
    let r = match (&args.d_col, param) {
        (Some(c), "late") => {
            let d = table.numeric(c)?;
            Rows::from_flat(2, y.iter().zip(&d).flat_map(|(y, d)| [*y, *d]).collect())?
        }
        _ => Rows::column(y),
    };
    let data = validate(args.eta, x, &a, r)?;

    let mut report = EstimateReport {
        param: param.to_string(),
        estimator: "unadjusted".into(),
        n,
        theta: Vec::new(),
        transformed: None,
        breakdown: None,
        vhat: None,
        se: None,
        ci: None,
        level: args.level,
        notes: Vec::new(),
    };
    if let Some(basis) = basis {
        let spec = BasisSpec { basis, coordinate: 0 };
        let fit = if param == "ate" { adjusted_ate(&data, spec)? } else { adjusted_late(&data, spec)? };
        report.estimator = format!("adjusted_{}", args.basis.replace('-', "_"));
        report.theta = vec![fit.theta];
        if fit.capped_fits > 0 {
            report.notes.push(format!("{} first-stage logistic fits hit the coefficient cap", fit.capped_fits));
        }
        report.notes.push("variance is the i.i.d.-assignment influence-function estimate".into());
        interval(&mut report, fit.theta, fit.vhat_iid);
        return Ok(report);
    }

    let model = builtin(param, args.tau, weight_coordinate)?;
    let est = estimate(model.as_ref(), &data)?;
    report.theta = est.theta.clone();
    report.transformed = est.transformed;
    if let Some(col) = &args.block_col {
        let blocks = partition(table, col)?;
        let b = vhat_fine(&data, &blocks, model.as_ref(), &est.theta)?;
        for w in &b.warnings {
            match w {
                VarianceWarning::OddBlockCountDropped { block } => report
                    .notes
                    .push(format!("odd block count: block {} left out of between-block products", block + 1)),
            }
        }
        interval(&mut report, est.theta[0], b.vhat);
        report.breakdown = Some(b);
    }
    Ok(report)
}

/// File wrapper around [`estimate_table`]; `output` receives the CSV report.
pub fn cmd_estimate(input: &Path, output: Option<&Path>, args: &EstimateArgs) -> Result<EstimateReport> {
    let table = Table::from_path(input)?;
    let report = estimate_table(&table, args)?;
    if let Some(path) = output {
        std::fs::write(path, report.to_csv()).map_err(io_err(path))?;
    }
    Ok(report)
}
