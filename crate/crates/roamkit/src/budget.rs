use serde::{Deserialize, Serialize};

/// Resource caps for enumeration-heavy operations. Exceeding a cap is an
/// explicit outcome (an error or a partial-result flag), never a silent
/// truncation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Budget {
    /// Maximum number of vertices a ball may hold.
    pub max_vertices: u64,
    /// Maximum number of words enumerated while building an equality table.
    pub max_table_words: u64,
    /// Maximum number of elements in a normal-form table.
    pub max_table_elements: u64,
    /// Maximum number of side triples scanned during thinness estimation;
    /// beyond it the scan switches to seeded sampling.
    pub max_triangles: u64,
    /// Node cap for a single quasi-geodesic search.
    pub max_qg_nodes_per_query: u64,
    /// Node cap shared by all quasi-geodesic searches of one verification.
    pub max_qg_nodes_total: u64,
    /// Cap on enumerated paths in one path-enumeration call.
    pub max_paths: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_vertices: 30_000_000,
            max_table_words: 4_000_000,
            max_table_elements: 500_000,
            max_triangles: 10_000_000,
            max_qg_nodes_per_query: 200_000,
            max_qg_nodes_total: 20_000_000,
            max_paths: 1_000_000,
        }
    }
}

impl Budget {
    /// Reads `ROAMKIT_BUDGET` as a global scale factor in percent
    /// (e.g. `ROAMKIT_BUDGET=50` halves every cap, `200` doubles them).
    /// Unset or unparsable values leave the defaults untouched.
    pub fn from_env() -> Self {
        let mut b = Budget::default();
        if let Ok(v) = std::env::var("ROAMKIT_BUDGET") {
            if let Ok(pct) = v.trim().parse::<u64>() {
                if pct > 0 {
                    b.scale(pct);
                }
            }
        }
        b
    }

    fn scale(&mut self, pct: u64) {
        let s = |x: u64| x.saturating_mul(pct) / 100;
        self.max_vertices = s(self.max_vertices).max(1);
        self.max_table_words = s(self.max_table_words).max(1);
        self.max_table_elements = s(self.max_table_elements).max(1);
        self.max_triangles = s(self.max_triangles).max(1);
        self.max_qg_nodes_per_query = s(self.max_qg_nodes_per_query).max(1);
        self.max_qg_nodes_total = s(self.max_qg_nodes_total).max(1);
        self.max_paths = s(self.max_paths).max(1);
    }
}
