//! Loading command inputs. Every loader checks that the file exists first so
//! the error names the path the user gave.

use std::path::Path;

use cgl_core::tensor_io::{flatten_tokens, read_axt, ActivationSet, AxtTensor, SparseRows, TokenLayout};
use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};

pub fn tensor(path: &Path) -> CliResult<AxtTensor> {
    if !path.is_file() {
        return Err(CliError::invalid(format!("input file not found: {}", path.display())));
    }
    Ok(read_axt(path)?)
}

/// `cls,reg,patch` token counts, e.g. `1,4,256`.
pub fn parse_layout(s: &str) -> Result<TokenLayout, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected CLS,REG,PATCH counts, got {s:?}"));
    }
    let n: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    TokenLayout::new(n[0], n[1], n[2]).map_err(|e| e.to_string())
}

/// A 3-d activation file; the layout comes from the flag, else from the
/// sidecar, else the tokens are taken to be patches only.
pub fn activations(path: &Path, layout: Option<TokenLayout>) -> CliResult<ActivationSet> {
    let t = tensor(path)?;
    Ok(match layout {
        Some(l) => ActivationSet::from_tensor(&t, l, None)?,
        None => ActivationSet::load(path)?,
    })
}

/// Token rows: a 2-d matrix as is, or a 3-d activation file flattened.
pub fn rows(path: &Path, layout: Option<TokenLayout>) -> CliResult<DMatrix<f64>> {
    let t = tensor(path)?;
    match t.ndim() {
        2 => Ok(t.to_matrix()?),
        3 => Ok(flatten_tokens(&activations(path, layout)?)),
        n => Err(CliError::invalid(format!("{}: expected a 2-d or 3-d tensor, got {n}-d", path.display()))),
    }
}

pub fn matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    Ok(tensor(path)?.to_matrix()?)
}

/// Codes are stored densely (rows × concepts); zeros are dropped on load.
pub fn codes(path: &Path) -> CliResult<SparseRows> {
    Ok(SparseRows::from_dense(&matrix(path)?)?)
}

pub fn sparse_to_tensor(z: &SparseRows) -> AxtTensor {
    AxtTensor::from_matrix(&z.to_dense())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_parsing() {
        let l = parse_layout("1, 4,256").unwrap();
        assert_eq!((l.n_cls, l.n_reg, l.n_patch), (1, 4, 256));
        assert!(parse_layout("1,4").is_err());
        assert!(parse_layout("1,x,4").is_err());
    }
}
