//! Model specifications accepted by `--model`.

use std::path::Path;

use anyhow::Result;
use attrib_core::model::{load_model, RegionMeanOracle, ScoreServerOracle};
use attrib_core::{BoundingBox, ClassifierOracle};

use crate::usage;

/// Loads one of:
/// - a `.tcnn` file,
/// - `region-mean:x0,y0,x1,y1`, a two-class oracle scoring the box brightness,
/// - `score-server:<command>`, an external process (needs `num_classes`).
pub fn load(spec: &str, num_classes: Option<usize>) -> Result<Box<dyn ClassifierOracle>> {
    if let Some(coords) = spec.strip_prefix("region-mean:") {
        let v: Vec<usize> = coords
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| usage(format!("bad region '{coords}', expected x0,y0,x1,y1")))?;
        let [x0, y0, x1, y1] = v[..] else {
            return Err(usage(format!("bad region '{coords}', expected x0,y0,x1,y1")));
        };
        let bbox = BoundingBox::new(x0, y0, x1, y1).map_err(|e| usage(e.to_string()))?;
        return Ok(Box::new(RegionMeanOracle::new(bbox)));
    }
    if let Some(cmd) = spec.strip_prefix("score-server:") {
        let n = num_classes.ok_or_else(|| usage("score-server models need --num-classes"))?;
        return Ok(Box::new(ScoreServerOracle::spawn(cmd, n)?));
    }
    Ok(Box::new(load_model(Path::new(spec))?))
}
