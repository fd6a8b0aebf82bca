//! Noun-to-region grounding providers.

use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::grid::BitGrid;
use crate::io::{decode_mask_pgm, encode_png};
use crate::{par, Error, Result};

pub type RegionMask = BitGrid;

pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.5;
pub const GROUNDING_URL_ENV: &str = "DM_ALIGN_GROUNDING_URL";

/// One noun to localize: its stemmed lemma (fixture key) and the prompt
/// text (modifiers followed by the lemma).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NounQuery {
    pub lemma: String,
    pub prompt: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub noun: String,
    #[serde(skip)]
    pub mask: RegionMask,
    pub confidence: f64,
}

pub trait GroundingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn ground(&self, image: &RgbImage, query: &NounQuery) -> Result<GroundingResult>;
}

/// Grounds each noun independently, in parallel, preserving input order.
pub fn ground_nouns(
    image: &RgbImage,
    nouns: &[NounQuery],
    provider: &dyn GroundingProvider,
) -> Result<Vec<GroundingResult>> {
    let results = par::map_slice(nouns, |q| provider.ground(image, q));
    results.into_iter().collect()
}

/// Pixelwise OR of every result with `confidence ≥ min_confidence`.
pub fn union_regions(results: &[GroundingResult], min_confidence: f64, width: usize, height: usize) -> Result<RegionMask> {
    let mut acc = BitGrid::new(width, height);
    for r in results {
        if r.mask.width != width || r.mask.height != height {
            return Err(Error::dims(
                format!("{width}x{height}"),
                format!("{}x{} mask for {:?}", r.mask.width, r.mask.height, r.noun),
            ));
        }
        if r.confidence >= min_confidence {
            acc = acc.union(&r.mask)?;
        }
    }
    Ok(acc)
}

fn check_mask(mask: &RegionMask, image: &RgbImage, noun: &str) -> Result<()> {
    if mask.width != image.width() as usize || mask.height != image.height() as usize {
        return Err(Error::dims(
            format!("{}x{} image", image.width(), image.height()),
            format!("{}x{} mask for {noun:?}", mask.width, mask.height),
        ));
    }
    Ok(())
}

/// Binary PGM masks named `<lemma>.pgm` in one directory.
#[derive(Clone, Debug)]
pub struct FixtureProvider {
    pub dir: PathBuf,
}

impl FixtureProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureProvider { dir: dir.into() }
    }

    pub fn path_for(&self, lemma: &str) -> PathBuf {
        self.dir.join(format!("{lemma}.pgm"))
    }
}

impl GroundingProvider for FixtureProvider {
    fn name(&self) -> &str {
        "fixture"
    }

    fn ground(&self, image: &RgbImage, query: &NounQuery) -> Result<GroundingResult> {
        let path = self.path_for(&query.lemma);
        if !path.exists() {
            log::warn!("no grounding fixture for {:?} at {}", query.lemma, path.display());
            return Ok(GroundingResult {
                noun: query.lemma.clone(),
                mask: BitGrid::new(image.width() as usize, image.height() as usize),
                confidence: 0.0,
            });
        }
        let mask = crate::io::load_mask_pgm(&path)?;
        check_mask(&mask, image, &query.lemma)?;
        Ok(GroundingResult { noun: query.lemma.clone(), mask, confidence: 1.0 })
    }
}

/// Finds nothing; every noun gets an empty mask.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullProvider;

impl GroundingProvider for NullProvider {
    fn name(&self) -> &str {
        "none"
    }

    fn ground(&self, image: &RgbImage, query: &NounQuery) -> Result<GroundingResult> {
        Ok(GroundingResult {
            noun: query.lemma.clone(),
            mask: BitGrid::new(image.width() as usize, image.height() as usize),
            confidence: 0.0,
        })
    }
}

#[derive(Serialize, Deserialize)]
pub struct GroundRequest {
    pub image_b64: String,
    pub prompt: String,
}

#[derive(Serialize, Deserialize)]
pub struct GroundResponse {
    pub mask_b64: String,
    pub confidence: f64,
}

/// Client for a `/ground` HTTP service. One attempt per call; failures map
/// to [`Error::ProviderUnavailable`].
///
/// The blocking client is built per call: it owns a runtime that must not be
/// dropped inside async code, and a provider can outlive the server's
/// runtime or be dropped on one of its threads.
#[derive(Clone, Debug)]
pub struct RemoteProvider {
    pub base_url: String,
}

impl RemoteProvider {
    pub const TIMEOUT: Duration = Duration::from_secs(30);

    pub fn new(base_url: impl Into<String>) -> Result<Self> {
        let base_url = base_url.into().trim_end_matches('/').to_string();
        reqwest::Url::parse(&base_url).map_err(|e| Error::InvalidArgument(format!("grounding url {base_url:?}: {e}")))?;
        Ok(RemoteProvider { base_url })
    }

    fn client(&self) -> Result<reqwest::blocking::Client> {
        reqwest::blocking::Client::builder()
            .timeout(Self::TIMEOUT)
            .build()
            .map_err(|e| Error::ProviderUnavailable(e.to_string()))
    }

    pub fn from_env() -> Result<Option<Self>> {
        match std::env::var(GROUNDING_URL_ENV) {
            Ok(url) if !url.trim().is_empty() => Ok(Some(Self::new(url)?)),
            _ => Ok(None),
        }
    }
}

impl GroundingProvider for RemoteProvider {
    fn name(&self) -> &str {
        "remote"
    }

    fn ground(&self, image: &RgbImage, query: &NounQuery) -> Result<GroundingResult> {
        let body = GroundRequest { image_b64: B64.encode(encode_png(image)?), prompt: query.prompt.clone() };
        let url = format!("{}/ground", self.base_url);
        let resp = self
            .client()?
            .post(&url)
            .json(&body)
            .send()
            .map_err(|e| Error::ProviderUnavailable(format!("{url}: {e}")))?;
        if !resp.status().is_success() {
            return Err(Error::ProviderUnavailable(format!("{url}: HTTP {}", resp.status())));
        }
        let parsed: GroundResponse = resp
            .json()
            .map_err(|e| Error::ProviderUnavailable(format!("{url}: bad response: {e}")))?;
        if !(0.0..=1.0).contains(&parsed.confidence) {
            return Err(Error::format("grounding response", format!("confidence {} outside [0,1]", parsed.confidence)));
        }
        let bytes = B64
            .decode(parsed.mask_b64.as_bytes())
            .map_err(|e| Error::format("grounding response", e.to_string()))?;
        let mask = decode_mask_pgm(&bytes)?;
        check_mask(&mask, image, &query.lemma)?;
        Ok(GroundingResult { noun: query.lemma.clone(), mask, confidence: parsed.confidence })
    }
}

/// Loads a fixture directory if given, otherwise the remote provider when
/// its environment variable is set, otherwise the null provider.
pub fn provider_from(fixtures: Option<&Path>) -> Result<Box<dyn GroundingProvider>> {
    if let Some(dir) = fixtures {
        return Ok(Box::new(FixtureProvider::new(dir)));
    }
    if let Some(remote) = RemoteProvider::from_env()? {
        return Ok(Box::new(remote));
    }
    Ok(Box::new(NullProvider))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn res(mask: BitGrid, confidence: f64) -> GroundingResult {
        GroundingResult { noun: "x".into(), mask, confidence }
    }

    #[test]
    fn union_examples() {
        let a = BitGrid::rect(4, 4, 0, 0, 2, 2);
        let b = BitGrid::rect(4, 4, 2, 2, 4, 4);
        assert_eq!(union_regions(&[res(a.clone(), 1.0)], 0.5, 4, 4).unwrap(), a);
        let u = union_regions(&[res(a.clone(), 1.0), res(b.clone(), 0.9)], 0.5, 4, 4).unwrap();
        assert_eq!(u.popcount(), a.popcount() + b.popcount());
        let none = union_regions(&[res(a, 0.2), res(b, 0.49)], 0.5, 4, 4).unwrap();
        assert!(none.is_empty_region());
        assert!(union_regions(&[res(BitGrid::new(3, 4), 1.0)], 0.5, 4, 4).is_err());
    }

    #[test]
    fn fixture_hit_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let mask = BitGrid::rect(4, 3, 1, 0, 3, 2);
        crate::io::save_mask_pgm(&dir.path().join("ship.pgm"), &mask).unwrap();
        let img = RgbImage::new(4, 3);
        let p = FixtureProvider::new(dir.path());
        let q = |l: &str| NounQuery { lemma: l.into(), prompt: l.into() };
        let hit = p.ground(&img, &q("ship")).unwrap();
        assert_eq!(hit.mask, mask);
        assert_eq!(hit.confidence, 1.0);
        let miss = p.ground(&img, &q("dog")).unwrap();
        assert!(miss.mask.is_empty_region());
        assert_eq!(miss.confidence, 0.0);
        let before = img.clone();
        let all = ground_nouns(&img, &[q("ship"), q("dog")], &p).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(img, before);
    }

    fn arb_mask() -> impl Strategy<Value = BitGrid> {
        proptest::collection::vec(any::<bool>(), 12).prop_map(|bits| BitGrid { width: 4, height: 3, bits })
    }

    proptest! {
        #[test]
        fn union_algebra(a in arb_mask(), b in arb_mask(), c in arb_mask()) {
            let u = |xs: Vec<BitGrid>| union_regions(&xs.into_iter().map(|m| res(m, 1.0)).collect::<Vec<_>>(), 0.5, 4, 3).unwrap();
            prop_assert_eq!(u(vec![a.clone(), b.clone()]), u(vec![b.clone(), a.clone()]));
            prop_assert_eq!(u(vec![u(vec![a.clone(), b.clone()]), c.clone()]), u(vec![a.clone(), u(vec![b.clone(), c.clone()])]));
            prop_assert_eq!(u(vec![a.clone(), a.clone()]), a);
        }
    }
}
