use super::OcrError;

/// One preprocessing + page-segmentation configuration. Only the eight
/// canonical configurations exist; the id determines every other field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExtractionMethodSpec {
    method_id: u8,
    grayscale: bool,
    upscale_factor: u32,
    otsu_binarize: bool,
    psm: u8,
}

const fn spec(method_id: u8, grayscale: bool, upscale_factor: u32, otsu_binarize: bool, psm: u8) -> ExtractionMethodSpec {
    ExtractionMethodSpec {
        method_id,
        grayscale,
        upscale_factor,
        otsu_binarize,
        psm,
    }
}

const CANONICAL: [ExtractionMethodSpec; 8] = [
    spec(1, false, 1, false, 3),
    spec(2, false, 1, false, 6),
    spec(3, false, 1, false, 11),
    spec(4, false, 1, false, 12),
    spec(5, true, 1, false, 3),
    spec(6, true, 4, false, 6),
    spec(7, true, 4, false, 11),
    spec(8, true, 4, true, 11),
];

/// Bumped whenever a canonical configuration changes.
const METHOD_TABLE_REVISION: u32 = 1;

pub fn canonical_methods() -> Vec<ExtractionMethodSpec> {
    CANONICAL.to_vec()
}

impl ExtractionMethodSpec {
    pub fn canonical(method_id: u8) -> Result<Self, OcrError> {
        CANONICAL
            .iter()
            .find(|s| s.method_id == method_id)
            .copied()
            .ok_or(OcrError::UnknownMethod(method_id))
    }

    pub fn method_id(&self) -> u8 {
        self.method_id
    }

    pub fn grayscale(&self) -> bool {
        self.grayscale
    }

    pub fn upscale_factor(&self) -> u32 {
        self.upscale_factor
    }

    pub fn otsu_binarize(&self) -> bool {
        self.otsu_binarize
    }

    pub fn psm(&self) -> u8 {
        self.psm
    }
}

/// Cache key component identifying the method set, e.g. `v1:1,2,3,4,5,6,7,8`.
pub fn methods_version(specs: &[ExtractionMethodSpec]) -> String {
    let ids: Vec<String> = specs.iter().map(|s| s.method_id.to_string()).collect();
    format!("v{METHOD_TABLE_REVISION}:{}", ids.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_matches_method_descriptions() {
        let m = canonical_methods();
        assert_eq!(m.len(), 8);
        let psms: Vec<u8> = m.iter().map(|s| s.psm()).collect();
        assert_eq!(psms, vec![3, 6, 11, 12, 3, 6, 11, 11]);
        assert!(m[..4].iter().all(|s| !s.grayscale() && s.upscale_factor() == 1));
        assert!(m[4].grayscale() && m[4].upscale_factor() == 1);
        assert!(m[5..].iter().all(|s| s.grayscale() && s.upscale_factor() == 4));
        assert_eq!(m.iter().filter(|s| s.otsu_binarize()).count(), 1);
        assert!(m[7].otsu_binarize());
        for s in &m {
            assert!(!s.otsu_binarize() || s.grayscale());
            assert_eq!(ExtractionMethodSpec::canonical(s.method_id()).unwrap(), *s);
        }
        assert!(ExtractionMethodSpec::canonical(9).is_err());
    }

    #[test]
    fn version_tracks_subset() {
        let all = canonical_methods();
        assert_eq!(methods_version(&all), "v1:1,2,3,4,5,6,7,8");
        assert_eq!(methods_version(&all[..1]), "v1:1");
    }
}
