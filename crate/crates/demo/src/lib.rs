//! WebAssembly bindings for the static demo page in `www/`.

use cutfem::classify::{ClassifyOptions, Immersion, SurfaceQuery};
use cutfem::geometry::{barycentric, Point3};
use cutfem::mesh::{generate_box_mesh, generate_sphere_surface};
use cutfem::scenarios::{run_comparison, run_needle_phantom, ComparisonConfig, OutputSink, PhantomConfig};
use wasm_bindgen::prelude::*;

fn js_error(e: cutfem::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Element labels of the 6×2×2 beam with an immersed sphere, sampled on a
/// `width`×`height` grid over the plane `y = 1`. Codes: 0 outside, 1 cut,
/// 2 inside, 255 where no element was found.
#[wasm_bindgen]
pub fn classify_slice(nx: usize, ny: usize, nz: usize, radius: f64, width: usize, height: usize) -> Result<Vec<u8>, JsError> {
    let mesh = generate_box_mesh([6.0, 2.0, 2.0], [nx, ny, nz]).map_err(js_error)?;
    let surface = generate_sphere_surface(Point3::new(3.0, 1.0, 1.0), radius, 3).map_err(js_error)?;
    let query = SurfaceQuery::new(&surface).map_err(js_error)?;
    let im = Immersion::build(&mesh, query, None, ClassifyOptions::default()).map_err(js_error)?;
    let mut out = vec![255u8; width * height];
    for j in 0..height {
        for i in 0..width {
            let p = Point3::new(6.0 * (i as f64 + 0.5) / width as f64, 1.0 + 1e-6, 2.0 * (1.0 - (j as f64 + 0.5) / height as f64));
            let cell = im.grid.cell_index(&p);
            for &e in im.grid.tets_in(cell) {
                let e = e as usize;
                if barycentric(&p, &mesh.corners(e)).is_some_and(|w| w.iter().all(|&x| x >= -1e-12)) {
                    out[j * width + i] = im.classification.labels[e].code();
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// Static end deflection of the bent beam on the first `levels` meshes of
/// the comparison study, as `[dofs, cut_uz, fem_uz]` triples.
#[wasm_bindgen]
pub fn bending_comparison(levels: usize, pressure: f64) -> Result<Vec<f64>, JsError> {
    let mut config = ComparisonConfig::default();
    config.meshes.truncate(levels.clamp(1, 3));
    config.pressure = pressure;
    config.steps = 0;
    let report = run_comparison(&config, &OutputSink::none()).map_err(js_error)?;
    Ok(report.rows.iter().flat_map(|r| [r.dofs as f64, r.cut_static.z, r.fem_static.z]).collect())
}

/// Force against tip displacement of a needle insertion into a coarse
/// phantom with inclusion stiffness `ratio`, as `[displacement, force]` pairs.
#[wasm_bindgen]
pub fn needle_force_curve(ratio: f64, depth: f64) -> Result<Vec<f64>, JsError> {
    let mut config = PhantomConfig {
        counts: [13, 5, 5],
        ratios: vec![ratio],
        ..Default::default()
    };
    config.needle.retraction_at = depth.clamp(0.5, 3.0);
    let report = run_needle_phantom(&config, &OutputSink::none()).map_err(js_error)?;
    let run = &report.runs[0].1;
    let d = run.column("tip_displacement");
    let f = run.column("force");
    Ok(d.iter().zip(&f).flat_map(|(a, b)| [*a, *b]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_shows_all_labels() {
        let img = classify_slice(25, 9, 9, 0.7, 60, 20).unwrap_or_else(|_| panic!("classification failed"));
        for code in 0..3u8 {
            assert!(img.contains(&code), "label {code} missing");
        }
        assert!(!img.contains(&255));
    }

    #[test]
    fn bending_levels_agree() {
        let v = bending_comparison(2, -5.0).unwrap_or_else(|_| panic!("comparison failed"));
        assert_eq!(v.len(), 6);
        for t in v.chunks(3) {
            assert!(t[1] < 0.0 && ((t[1] - t[2]) / t[2]).abs() < 0.02);
        }
    }
}
