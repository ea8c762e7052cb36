use std::fs;
use std::path::Path;

use outsync_core::Result;

/// Writes `<stem>.gp` next to `csv`: every column against the first on a
/// log scale, rendered to `<stem>.png`.
pub fn write_script(csv: &Path) -> Result<()> {
    let text = fs::read_to_string(csv)?;
    let header = text.lines().next().unwrap_or_default();
    let columns = header.split(',').count().max(2);
    let name = csv.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let script = format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set logscale y\n\
         set format y '%.0e'\n\
         set xlabel '{x}'\n\
         set terminal pngcairo size 900,600\n\
         set output '{stem}.png'\n\
         plot for [i=2:{columns}] '{name}' using 1:(abs(column(i))) with lines\n",
        x = header.split(',').next().unwrap_or("t"),
    );
    fs::write(csv.with_extension("gp"), script)?;
    Ok(())
}
