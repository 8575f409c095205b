use std::path::{Path, PathBuf};

use stratkit::design::{assign_fine, block_greedy, block_sorted, drop_remainder};
use stratkit::{rng, Rows};

use crate::table::Table;
use crate::{io_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BlockMethod {
    /// Sort on the first covariate and cut into consecutive blocks.
    Sorted,
    /// Greedy nearest-neighbour blocks on all covariates.
    Greedy,
}

#[derive(Debug, Clone)]
pub struct AssignArgs {
    pub k: usize,
    pub l: usize,
    pub covariates: Vec<String>,
    pub method: BlockMethod,
    pub seed: u64,
    pub drop_remainder: bool,
}

/// Rows in block order: `(unit_id, block_id, treatment)` with 1-based block ids.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignOutput {
    pub rows: Vec<(String, usize, u8)>,
    pub dropped: Vec<String>,
}

impl AssignOutput {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("unit_id,block_id,treatment\n");
        for (id, block, t) in &self.rows {
            out.push_str(&format!("{id},{block},{t}\n"));
        }
        out
    }

    pub fn dropped_csv(&self) -> String {
        let mut out = String::from("unit_id\n");
        for id in &self.dropped {
            out.push_str(id);
            out.push('\n');
        }
        out
    }
}

fn covariate_rows(table: &Table, names: &[String]) -> Result<Rows> {
    let cols: Vec<usize> = names.iter().map(|c| table.index(c)).collect::<Result<_>>()?;
    let mut flat = Vec::with_capacity(table.len() * cols.len());
    for (i, row) in table.rows.iter().enumerate() {
        for (&j, name) in cols.iter().zip(names) {
            let v = row[j].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                CliError::NonNumericCovariate {
                    column: name.clone(),
                    row: i + 1,
                    value: row[j].clone(),
                }
            })?;
            flat.push(v);
        }
    }
    Ok(Rows::from_flat(cols.len(), flat)?)
}

/// Blocks the units of `table` and assigns exactly `l` of every block to
/// treatment. Units left over when `n mod k != 0` are the largest values of
/// the first covariate.
pub fn assign_table(table: &Table, args: &AssignArgs) -> Result<AssignOutput> {
    if args.covariates.is_empty() {
        return Err(CliError::Usage("--covariates needs at least one column".into()));
    }
    if args.k < 2 || args.l == 0 || args.l >= args.k {
        return Err(CliError::Usage(format!("need 0 < l < k, got l = {}, k = {}", args.l, args.k)));
    }
    let ids = table.strings("unit_id")?;
    let x = covariate_rows(table, &args.covariates)?;
    if x.is_empty() {
        return Err(stratkit::Error::EmptyInput.into());
    }
    let n = x.len();
    let (kept, dropped) = if n % args.k == 0 {
        ((0..n).collect(), Vec::new())
    } else if args.drop_remainder {
        drop_remainder(&x, 0, args.k)?
    } else {
        return Err(stratkit::Error::NotDivisible { n, k: args.k }.into());
    };
    let xk = x.select(&kept);
    let partition = match args.method {
        BlockMethod::Sorted => block_sorted(&xk, 0, args.k)?,
        BlockMethod::Greedy => block_greedy(&xk, args.k)?,
    };
    let a = assign_fine(&partition, args.l, &mut rng::seeded(args.seed));
    let rows = partition
        .blocks()
        .iter()
        .enumerate()
        .flat_map(|(b, block)| block.iter().map(move |&i| (b, i)))
        .map(|(b, i)| (ids[kept[i]].clone(), b + 1, a[i]))
        .collect();
    Ok(AssignOutput {
        rows,
        dropped: dropped.iter().map(|&i| ids[i].clone()).collect(),
    })
}

/// Default sidecar path for dropped units: `out.csv` -> `out.dropped.csv`.
pub fn dropped_path(output: &Path) -> PathBuf {
    output.with_extension("dropped.csv")
}

/// File wrapper around [`assign_table`]. The sidecar is written only when
/// units were dropped; its path is returned.
pub fn cmd_assign(input: &Path, output: &Path, args: &AssignArgs) -> Result<(AssignOutput, Option<PathBuf>)> {
    let table = Table::from_path(input)?;
    let out = assign_table(&table, args)?;
    std::fs::write(output, out.to_csv()).map_err(io_err(output))?;
    let sidecar = if out.dropped.is_empty() {
        None
    } else {
        let path = dropped_path(output);
        std::fs::write(&path, out.dropped_csv()).map_err(io_err(&path))?;
        Some(path)
    };
    Ok((out, sidecar))
}
