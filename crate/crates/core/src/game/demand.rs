//! Price-survey grid: every catalog product crossed with every relative-price level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GameError;
use crate::money::Cents;

pub const CATALOG_SIZE: usize = 40;
/// Relative price levels are `k / 5` for `k = 0..=10`.
pub const PRICE_LEVELS: usize = 11;

pub const DEFAULT_CATALOG: &str = include_str!("../../data/catalog.csv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub id: u32,
    pub name: String,
    pub regular_price: Cents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandCell {
    pub product_id: u32,
    pub product_name: String,
    pub regular_price: Cents,
    pub level_index: u8,
    pub relative_price: f64,
    pub display_price: Cents,
}

pub fn relative_price(level_index: u8) -> f64 {
    level_index as f64 / 5.0
}

/// Parses `product_id, name, regular_price_cents` records. Names may contain commas.
pub fn parse_catalog(text: &str) -> Result<Vec<Product>, GameError> {
    let mut products = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| GameError::Config(format!("catalog line {}: {what}", lineno + 1));
        let (id, rest) = line.split_once(',').ok_or_else(|| bad("missing fields"))?;
        let (name, price) = rest.rsplit_once(',').ok_or_else(|| bad("missing price"))?;
        let id: u32 = id.trim().parse().map_err(|_| bad("invalid product id"))?;
        let price: i64 = price.trim().parse().map_err(|_| bad("invalid price"))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(bad("empty product name"));
        }
        products.push(Product {
            id,
            name: name.to_string(),
            regular_price: Cents(price),
        });
    }
    Ok(products)
}

pub fn load_catalog(path: &Path) -> Result<Vec<Product>, GameError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GameError::Config(format!("reading {}: {e}", path.display())))?;
    parse_catalog(&text)
}

pub fn default_catalog() -> Vec<Product> {
    parse_catalog(DEFAULT_CATALOG).expect("bundled catalog parses")
}

pub fn demand_grid(catalog: &[Product]) -> Result<Vec<DemandCell>, GameError> {
    if catalog.len() != CATALOG_SIZE {
        return Err(GameError::Config(format!(
            "catalog must list exactly {CATALOG_SIZE} products, got {}",
            catalog.len()
        )));
    }
    if let Some(p) = catalog.iter().find(|p| p.regular_price <= Cents::ZERO) {
        return Err(GameError::Config(format!(
            "product {} has a non-positive regular price",
            p.id
        )));
    }
    let mut cells = Vec::with_capacity(CATALOG_SIZE * PRICE_LEVELS);
    for p in catalog {
        for k in 0..PRICE_LEVELS as u8 {
            // round half up on exact integer arithmetic
            let display = (p.regular_price.0 * k as i64 * 2 + 5) / 10;
            cells.push(DemandCell {
                product_id: p.id,
                product_name: p.name.clone(),
                regular_price: p.regular_price,
                level_index: k,
                relative_price: relative_price(k),
                display_price: Cents(display),
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_catalog_has_forty_products() {
        let c = default_catalog();
        assert_eq!(c.len(), 40);
        assert!(c
            .iter()
            .all(|p| p.regular_price >= Cents(100) && p.regular_price <= Cents(2000)));
    }

    #[test]
    fn grid_has_440_cells() {
        let grid = demand_grid(&default_catalog()).unwrap();
        assert_eq!(grid.len(), 440);
        assert_eq!(grid, demand_grid(&default_catalog()).unwrap());
        let levels: Vec<f64> = grid[..11].iter().map(|c| c.relative_price).collect();
        assert_eq!(levels[0], 0.0);
        assert_eq!(levels[5], 1.0);
        assert_eq!(levels[10], 2.0);
    }

    #[test]
    fn display_price_follows_level() {
        let mut catalog = default_catalog();
        catalog[0].regular_price = Cents(500);
        let grid = demand_grid(&catalog).unwrap();
        assert_eq!(grid[5].display_price, Cents(500));
        assert_eq!(grid[0].display_price, Cents(0));
        assert_eq!(grid[10].display_price, Cents(1000));
        assert_eq!(grid[3].display_price, Cents(300));
    }

    #[test]
    fn wrong_catalog_size_is_config_error() {
        let mut c = default_catalog();
        c.pop();
        assert!(matches!(demand_grid(&c), Err(GameError::Config(_))));
    }

    #[test]
    fn catalog_parse_errors_name_the_line() {
        let err = parse_catalog("1, Soap, 100\n2, Tea\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let p = parse_catalog("7, Salt, Pepper Mix, 250").unwrap();
        assert_eq!(p[0].name, "Salt, Pepper Mix");
    }
}
