//! HTTP+JSON synthesis service.
//!
//! ```text
//! GET  /taxonomy
//! GET  /sources?limit=&offset=
//! GET  /sources/{id}/regions/{i}/thumb     RGBA PNG, transparent outside the region
//! POST /synthesize  {assignments: {region: source}, checkpoint?, previous_result?}
//! POST /edit        {prev_result_id, replacements: {region: source | null}}
//! GET  /results/{id}
//! GET  /results/{id}/{image.png | mask.png | fuzzy.json}
//! ```

use std::collections::BTreeMap;
use std::io::Cursor;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::engine::{EditRequest, Engine, SynthesisRequest};
use crate::error::ApiError;
use crate::store::{ResultRecord, ResultStore, FUZZY_FILE, IMAGE_FILE, MASK_FILE};

pub const DEFAULT_SOURCE_LIMIT: usize = 50;
pub const MAX_SOURCE_LIMIT: usize = 1000;

pub struct AppState {
    pub engine: Engine,
    pub store: ResultStore,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/taxonomy", get(taxonomy))
        .route("/sources", get(sources))
        .route("/sources/{id}/regions/{i}/thumb", get(thumb))
        .route("/synthesize", post(synthesize))
        .route("/edit", post(edit))
        .route("/results/{id}", get(result))
        .route("/results/{id}/{file}", get(result_file))
        .with_state(state)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionInfo {
    pub index: usize,
    pub name: String,
    /// Index of the mirrored region (itself when unpaired).
    pub mirror: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyInfo {
    pub name: String,
    pub regions: Vec<RegionInfo>,
    pub symmetry_groups: Vec<Vec<usize>>,
    pub background_index: usize,
    pub resolution: usize,
    pub checkpoint: String,
}

async fn taxonomy(State(s): State<Arc<AppState>>) -> Json<TaxonomyInfo> {
    let tax = s.engine.taxonomy();
    Json(TaxonomyInfo {
        name: tax.name().to_string(),
        regions: (0..tax.len())
            .map(|i| RegionInfo {
                index: i,
                name: tax.region_name(i).unwrap_or_default().to_string(),
                mirror: tax.mirror_of(i),
            })
            .collect(),
        symmetry_groups: tax.symmetry_groups().to_vec(),
        background_index: tax.background_index(),
        resolution: s.engine.dataset.manifest.resolution,
        checkpoint: s.engine.snapshot().checkpoint_id.clone(),
    })
}

#[derive(Debug, Deserialize)]
pub struct SourceQuery {
    pub limit: Option<usize>,
    pub offset: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub id: String,
    /// Region indices present in the source.
    pub regions: Vec<usize>,
    /// Region index → thumbnail URL.
    pub thumbs: BTreeMap<usize, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceList {
    pub total: usize,
    pub offset: usize,
    pub sources: Vec<SourceInfo>,
}

async fn sources(State(s): State<Arc<AppState>>, Query(q): Query<SourceQuery>) -> Json<SourceList> {
    let data = &s.engine.dataset;
    let tax = data.taxonomy();
    let offset = q.offset.unwrap_or(0);
    let limit = q.limit.unwrap_or(DEFAULT_SOURCE_LIMIT).min(MAX_SOURCE_LIMIT);
    let sources = data
        .samples
        .iter()
        .skip(offset)
        .take(limit)
        .map(|smp| {
            let regions = smp.mask.present_regions(tax);
            SourceInfo {
                id: smp.id.0.clone(),
                thumbs: regions
                    .iter()
                    .map(|&i| (i, format!("/sources/{}/regions/{i}/thumb", smp.id)))
                    .collect(),
                regions,
            }
        })
        .collect();
    Json(SourceList {
        total: data.len(),
        offset,
        sources,
    })
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn thumb(State(s): State<Arc<AppState>>, Path((id, i)): Path<(String, usize)>) -> Result<Response, ApiError> {
    let data = &s.engine.dataset;
    let tax = data.taxonomy();
    let smp = data
        .get(&id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown source id `{id}`")))?;
    let slice = smp.mask.extract_region(tax, i).map_err(|_| ApiError::Invalid {
        rule: "known region".into(),
        detail: format!("region index {i} outside 0..{}", tax.len()),
    })?;
    if slice.is_empty() {
        return Err(ApiError::NotFound(format!(
            "source `{id}` has no `{}`",
            tax.region_name(i).unwrap_or("?")
        )));
    }
    let rgb = smp.image.to_rgb8();
    let rgba = image::RgbaImage::from_fn(rgb.width(), rgb.height(), |x, y| {
        let p = rgb.get_pixel(x, y).0;
        let inside = slice.data[(y * rgb.width() + x) as usize] != 0;
        image::Rgba([p[0], p[1], p[2], if inside { 255 } else { 0 }])
    });
    let mut out = Cursor::new(Vec::new());
    rgba.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(png(out.into_inner()))
}

/// Renders and stores on a blocking thread; the returned record reports
/// `previous` as this request's parent even when the content was cached.
async fn render_and_store(
    s: Arc<AppState>,
    spec: regionmix::composition::CompositionSpec,
    previous: Option<ResultRecord>,
) -> Result<ResultRecord, ApiError> {
    tokio::task::spawn_blocking(move || {
        let rendered = s.engine.render(spec)?;
        let record = ResultRecord::new(&rendered, s.engine.taxonomy(), previous.as_ref());
        let mut stored = s.store.put(&rendered, record.clone())?;
        stored.previous_result = record.previous_result;
        stored.chain = record.chain;
        Ok(stored)
    })
    .await
    .map_err(|e| ApiError::Internal(format!("synthesis task failed: {e}")))?
}

fn previous(s: &AppState, id: &str) -> Result<ResultRecord, ApiError> {
    s.store
        .get(id)?
        .ok_or_else(|| ApiError::NotFound(format!("unknown result id `{id}`")))
}

async fn synthesize(
    State(s): State<Arc<AppState>>,
    Json(req): Json<SynthesisRequest>,
) -> Result<Json<ResultRecord>, ApiError> {
    if let Some(c) = &req.checkpoint {
        let loaded = s.engine.snapshot().checkpoint_id.clone();
        if *c != loaded {
            return Err(ApiError::NotFound(format!("checkpoint `{c}` is not loaded (serving `{loaded}`)")));
        }
    }
    let prev = req.previous_result.as_deref().map(|p| previous(&s, p)).transpose()?;
    let spec = s.engine.spec_from_assignments(&req.assignments)?;
    Ok(Json(render_and_store(s, spec, prev).await?))
}

async fn edit(State(s): State<Arc<AppState>>, Json(req): Json<EditRequest>) -> Result<Json<ResultRecord>, ApiError> {
    let prev = previous(&s, &req.prev_result_id)?;
    let spec = s.engine.spec_from_edit(&prev.provenance, &req.replacements)?;
    Ok(Json(render_and_store(s, spec, Some(prev)).await?))
}

async fn result(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<ResultRecord>, ApiError> {
    Ok(Json(previous(&s, &id)?))
}

async fn result_file(
    State(s): State<Arc<AppState>>,
    Path((id, file)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let content_type = match file.as_str() {
        IMAGE_FILE | MASK_FILE => "image/png",
        FUZZY_FILE => "application/json",
        _ => return Err(ApiError::NotFound(format!("no file `{file}` in results"))),
    };
    let path = s
        .store
        .file(&id, &file)
        .ok_or_else(|| ApiError::NotFound(format!("unknown result id `{id}`")))?;
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(ApiError::NotFound(format!("unknown result id `{id}`")))
        }
        Err(e) => Err(ApiError::Internal(format!("{}: {e}", path.display()))),
    }
}
