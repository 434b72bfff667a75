#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::Parser;
pub use layered_dr_cli::Command as Sub;
use layered_dr_cli::{commands, Cli};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_layered-dr"))
}

pub fn run_bin(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn parse(args: &[&str]) -> Sub {
    Cli::try_parse_from(std::iter::once("layered-dr").chain(args.iter().copied()))
        .expect("arguments parse")
        .command
}

/// Exports a short noise-free sequence into `dir/seq` and returns the manifest.
pub fn export(dir: &Path, sequence: usize) -> PathBuf {
    let out = dir.join("seq");
    let Sub::Export(a) = parse(&[
        "export",
        &sequence.to_string(),
        "-o",
        out.to_str().unwrap(),
        "--noise",
        "off",
        "--init-frames",
        "2",
    ]) else {
        unreachable!()
    };
    commands::export(&a).expect("export succeeds")
}

/// Synthesizes `manifest` on a coarse grid into `dir/layers`.
pub fn synthesize(manifest: &Path, dir: &Path) -> PathBuf {
    let out = dir.join("layers");
    let Sub::Synthesize(a) = parse(&[
        "synthesize",
        manifest.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--grid-dims",
        "128",
        "--voxel-size",
        "0.004",
    ]) else {
        unreachable!()
    };
    commands::synthesize(&a).expect("synthesize succeeds");
    out
}

/// Layers for sequence 3 at 128³.
pub fn layers_fixture(dir: &Path) -> PathBuf {
    let manifest = export(dir, 3);
    synthesize(&manifest, dir)
}
