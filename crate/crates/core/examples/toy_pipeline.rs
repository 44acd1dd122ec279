//! Runs every stage on the bundled toy dataset in a temporary directory and
//! prints the evaluation table.

use pathmil::config::PipelineConfig;
use pathmil::fixtures::write_toy_dataset;
use pathmil::pipeline::{files, Pipeline, Stage};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let config_path = write_toy_dataset(dir.path())?;
    let config = PipelineConfig::load(&config_path, &[])?;
    let pipeline = Pipeline::new(config)?;
    for summary in pipeline.run(Stage::Pipeline)? {
        println!("{summary}");
    }
    print!("{}", std::fs::read_to_string(pipeline.path(files::REPORT_TXT))?);
    Ok(())
}
