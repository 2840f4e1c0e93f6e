//! A denoiser that runs an external program on grid files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use adareg::denoise::Denoise;
use adareg::error::{Error, Result};
use adareg::model::{decode_field, encode_field, GridHeader, GridKind, GridShape};

/// Runs a command template once per denoiser call.
///
/// The template is split on whitespace; `{in}`, `{out}` and `{scale}` are replaced by the
/// input grid path, the expected output path and the scale (shortest round-trip decimal),
/// and `{exe}` by the path of the running program. Paths with spaces are not supported.
#[derive(Debug)]
pub struct ExternalDenoiser {
    template: Vec<String>,
    dz: f64,
    dx: f64,
    exe: PathBuf,
    dir: tempfile::TempDir,
}

impl ExternalDenoiser {
    /// `dz` and `dx` are written into the exchanged grid headers.
    pub fn new(template: &str, dz: f64, dx: f64) -> Result<Self> {
        let template: Vec<String> = template.split_whitespace().map(str::to_string).collect();
        if template.is_empty() {
            return Err(Error::Config("external denoiser command is empty".into()));
        }
        if !template.iter().any(|t| t.contains("{in}")) || !template.iter().any(|t| t.contains("{out}")) {
            return Err(Error::Config(
                "external denoiser command needs {in} and {out} placeholders".into(),
            ));
        }
        Ok(Self {
            template,
            dz,
            dx,
            exe: std::env::current_exe()?,
            dir: tempfile::tempdir()?,
        })
    }

    pub fn template(&self) -> String {
        self.template.join(" ")
    }

    fn expand(&self, input: &Path, output: &Path, scale: f64) -> Vec<String> {
        self.template
            .iter()
            .map(|t| {
                t.replace("{in}", &input.to_string_lossy())
                    .replace("{out}", &output.to_string_lossy())
                    .replace("{scale}", &scale.to_string())
                    .replace("{exe}", &self.exe.to_string_lossy())
            })
            .collect()
    }
}

impl Denoise for ExternalDenoiser {
    fn denoise(&self, x: &[f64], shape: GridShape, scale: f64) -> Result<Vec<f64>> {
        let input = self.dir.path().join("in.grd");
        let output = self.dir.path().join("out.grd");
        let header = GridHeader {
            nz: shape.nz,
            nx: shape.nx,
            dz: self.dz,
            dx: self.dx,
            kind: GridKind::SquaredSlowness,
        };
        fs::write(&input, encode_field(&header, x)?)?;
        if output.exists() {
            fs::remove_file(&output)?;
        }
        let argv = self.expand(&input, &output, scale);
        let result = Command::new(&argv[0])
            .args(&argv[1..])
            .output()
            .map_err(|e| Error::Denoiser(format!("cannot start '{}': {e}", argv[0])))?;
        if !result.status.success() {
            return Err(Error::Denoiser(format!(
                "'{}' exited with {}: {}",
                argv.join(" "),
                result.status,
                String::from_utf8_lossy(&result.stderr).trim()
            )));
        }
        let bytes = fs::read(&output).map_err(|e| {
            Error::Denoiser(format!(
                "'{}' left no output at {}: {e}",
                argv.join(" "),
                output.display()
            ))
        })?;
        let (h, values) =
            decode_field(&bytes).map_err(|e| Error::Denoiser(format!("unreadable denoiser output: {e}")))?;
        if (h.nz, h.nx) != (shape.nz, shape.nx) {
            return Err(Error::Denoiser(format!(
                "denoiser returned a {}x{} grid for a {}x{} input",
                h.nz, h.nx, shape.nz, shape.nx
            )));
        }
        Ok(values)
    }

    fn name(&self) -> String {
        format!("external({})", self.template())
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;

    #[test]
    fn copying_command_is_the_identity() {
        let d = ExternalDenoiser::new("cp {in} {out}", 1.0, 1.0).unwrap();
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.3 - 1.0).collect();
        assert_eq!(d.denoise(&x, GridShape::new(3, 4), 0.5).unwrap(), x);
    }

    #[test]
    fn failures_carry_context() {
        let x = vec![1.0; 9];
        let s = GridShape::new(3, 3);
        let silent = ExternalDenoiser::new("true {in} {out}", 1.0, 1.0).unwrap();
        assert!(matches!(silent.denoise(&x, s, 1.0), Err(Error::Denoiser(m)) if m.contains("no output")));
        let failing = ExternalDenoiser::new("false {in} {out}", 1.0, 1.0).unwrap();
        assert!(matches!(failing.denoise(&x, s, 1.0), Err(Error::Denoiser(_))));
        let missing = ExternalDenoiser::new("/nonexistent/denoiser {in} {out}", 1.0, 1.0).unwrap();
        assert!(matches!(missing.denoise(&x, s, 1.0), Err(Error::Denoiser(m)) if m.contains("cannot start")));
        assert!(ExternalDenoiser::new("cp {in}", 1.0, 1.0).is_err());
        assert!(ExternalDenoiser::new("  ", 1.0, 1.0).is_err());
    }
}
