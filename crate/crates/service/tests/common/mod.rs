#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub const STUDIES: usize = 4;
pub const CRITERIA: usize = 2;
pub const ROUNDS: usize = 5;
/// Study whose first criterion dips below threshold in round 3.
pub const CONFLICT_STUDY: &str = "S2";

const CSV: &str = "\
id,title,abstract,keywords,label
S1,Screening with language models,We evaluate model screening on trial abstracts.,llm; screening,included
S2,Automated triage of abstracts,Prompted models triage candidate abstracts.,triage; automation,included
S3,Soil nitrogen dynamics,Field measurements of nitrogen in wheat plots.,soil; nitrogen,excluded
S4,Bridge fatigue monitoring,Strain gauges track fatigue in steel bridges.,bridges; fatigue,excluded
";

const SCRIPT: &str = r#"{
  "default": "6",
  "by_study": { "S2": { "0": ["6", "6", "3", "6", "6"] } }
}"#;

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    /// Corpus, mock script and run config with `extra` appended to the
    /// provider table.
    pub fn new(extra_provider: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("studies.csv"), CSV).unwrap();
        std::fs::write(dir.path().join("script.json"), SCRIPT).unwrap();
        let config = format!(
            r#"
rule = "unanimity"
output_dir = "out"
verification_fraction = 0.5

[corpus]
path = "studies.csv"
criteria = ["Uses a language model", "Evaluates screening"]

[[providers]]
provider_name = "local"
kind = "mock"
model_id = "mock-a"
mock_script = "script.json"
{extra_provider}
"#
        );
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.path().join("run.toml")
    }

    pub fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    /// Runs the CLI on its own thread so async tests can call it.
    pub fn run(&self, args: &[&str]) -> i32 {
        let config = self.config();
        let mut argv: Vec<String> = vec!["slr-screen".into(), "--config".into(), config.display().to_string()];
        argv.extend(args.iter().map(|s| s.to_string()));
        std::thread::spawn(move || screening_service::cli::run(argv)).join().unwrap()
    }
}

pub fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.trim().is_empty()).count()
}
