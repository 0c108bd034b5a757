use std::fs;
use std::path::{Path, PathBuf};

use midline_core::formats::{write_json, GtImage};
use midline_core::ingest::{
    annotation_extent, dota_vocabulary, parse_dota, parse_icdar, text_vocabulary, tile_image,
    AnnotatedImage, ParseOptions, Tile, TileSpec,
};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};
use crate::{info, warn, AnnotationFormat};

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "tif", "tiff", "bmp"];

fn image_id(path: &Path, format: AnnotationFormat) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match format {
        AnnotationFormat::Icdar => stem.strip_prefix("gt_").unwrap_or(&stem).to_string(),
        AnnotationFormat::Dota => stem,
    }
}

fn image_size(images: Option<&Path>, id: &str) -> CliResult<Option<(u32, u32)>> {
    let Some(dir) = images else { return Ok(None) };
    for ext in IMAGE_EXTENSIONS {
        let p = dir.join(format!("{id}.{ext}"));
        if p.is_file() {
            return image::image_dimensions(&p)
                .map(Some)
                .map_err(|e| CliError::io(format!("{}: {e}", p.display())));
        }
    }
    Ok(None)
}

struct FileResult {
    tiles: Vec<Tile>,
    warnings: Vec<String>,
    objects: usize,
}

fn process(
    path: &Path,
    format: AnnotationFormat,
    spec: &TileSpec,
    images: Option<&Path>,
    opts: &ParseOptions,
) -> CliResult<FileResult> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let (parsed, class_names) = match format {
        AnnotationFormat::Dota => {
            let vocab = dota_vocabulary();
            (parse_dota(&text, &vocab, opts), vocab)
        }
        AnnotationFormat::Icdar => (parse_icdar(&text, opts), text_vocabulary()),
    };
    let parsed = parsed.map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let id = image_id(path, format);
    let (width, height) = match image_size(images, &id)? {
        Some(size) => size,
        None => annotation_extent(&parsed.objects),
    };
    let img = AnnotatedImage {
        image_id: id,
        width,
        height,
        objects: parsed.objects,
        class_names,
    };
    let objects = img.objects.len();
    let (img, clamp_warnings) = img.clamped();
    let (tiles, tile_warnings) = tile_image(&img, spec)?;
    let warnings = parsed
        .warnings
        .into_iter()
        .map(|w| format!("{}: {w}", path.display()))
        .chain(clamp_warnings)
        .chain(tile_warnings)
        .collect();
    Ok(FileResult {
        tiles,
        warnings,
        objects,
    })
}

pub fn run(
    input: &Path,
    output: &Path,
    format: AnnotationFormat,
    window: u32,
    overlap: f64,
    images: Option<&Path>,
    strict: bool,
) -> CliResult<()> {
    let spec = TileSpec {
        window,
        overlap_fraction: overlap,
    };
    spec.validate()?;
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| CliError::io(format!("{}: {e}", input.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    let opts = ParseOptions { strict };
    let results: Vec<CliResult<FileResult>> = files
        .par_iter()
        .map(|p| process(p, format, &spec, images, &opts))
        .collect();
    fs::create_dir_all(output).map_err(|e| CliError::io(format!("{}: {e}", output.display())))?;
    let (mut n_tiles, mut n_objects) = (0, 0);
    for result in results {
        let r = result?;
        for w in &r.warnings {
            warn!("skipped", detail = w);
        }
        n_objects += r.objects;
        for tile in &r.tiles {
            let path = output.join(format!("{}.json", tile.image.image_id));
            write_json(&path, &[GtImage::from_annotated(&tile.image)])?;
        }
        n_tiles += r.tiles.len();
    }
    info!(
        "tile",
        images = files.len(),
        tiles = n_tiles,
        objects = n_objects,
        window = window,
        overlap = overlap,
        step = spec.step(),
    );
    Ok(())
}
