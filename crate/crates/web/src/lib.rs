//! WebAssembly bindings for the demo page in `www/`.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js(e: bbpc_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Flat `[x, y, z, ...]` coordinates of the occupied voxels of a synthetic cloud.
#[wasm_bindgen(js_name = voxelCoords)]
pub fn voxel_coords(kind: &str, points: usize, depth: u8, seed: u64) -> Result<Vec<u32>, JsError> {
    demo::voxel_coords(kind, points, depth, seed).map_err(js)
}

#[wasm_bindgen]
pub struct BatchSummary(demo::BatchSummary);

#[wasm_bindgen]
impl BatchSummary {
    #[wasm_bindgen(getter)]
    pub fn clouds(&self) -> usize {
        self.0.clouds
    }
    #[wasm_bindgen(getter)]
    pub fn points(&self) -> f64 {
        self.0.points as f64
    }
    #[wasm_bindgen(getter, js_name = trainLossBits)]
    pub fn train_loss_bits(&self) -> Vec<f64> {
        self.0.train_loss_bits.clone()
    }
    #[wasm_bindgen(getter, js_name = bitsbackBits)]
    pub fn bitsback_bits(&self) -> f64 {
        self.0.bitsback_bits as f64
    }
    #[wasm_bindgen(getter, js_name = initialBits)]
    pub fn initial_bits(&self) -> f64 {
        self.0.initial_bits as f64
    }
    #[wasm_bindgen(getter, js_name = bitsbackBpp)]
    pub fn bitsback_bpp(&self) -> f64 {
        self.0.bitsback_bpp
    }
    #[wasm_bindgen(getter, js_name = sequentialBpp)]
    pub fn sequential_bpp(&self) -> f64 {
        self.0.sequential_bpp
    }
    #[wasm_bindgen(getter, js_name = modelBytes)]
    pub fn model_bytes(&self) -> f64 {
        self.0.model_bytes as f64
    }
    #[wasm_bindgen(getter, js_name = tableBytes)]
    pub fn table_bytes(&self) -> f64 {
        self.0.table_bytes as f64
    }
    #[wasm_bindgen(getter)]
    pub fn lossless(&self) -> bool {
        self.0.lossless
    }
}

/// Trains a small model on a synthetic batch and compresses it with both codecs.
#[wasm_bindgen(js_name = compressBatch)]
pub fn compress_batch(
    clouds: usize,
    points: usize,
    depth: u8,
    epochs: usize,
    seed: u64,
) -> Result<BatchSummary, JsError> {
    demo::compress_batch_summary(clouds, points, depth, epochs, seed)
        .map(BatchSummary)
        .map_err(js)
}

/// Quantized posterior bucket frequencies (they sum to 65536).
#[wasm_bindgen(js_name = posteriorFrequencies)]
pub fn posterior_frequencies(mu: f64, sigma: f64, p_bits: u8) -> Result<Vec<u32>, JsError> {
    demo::posterior_frequencies(mu, sigma, p_bits).map_err(js)
}
