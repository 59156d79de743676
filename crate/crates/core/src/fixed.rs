//! Fixed-point units for backtest accounting.
//!
//! Input prices arrive as decimal dollars with at most three places and are
//! held as [`Mills`]. The averaged fill price can land on a half mill, so
//! fills use the finer [`Price`] grid (1/10,000 dollar). Quantities live on
//! a micro-contract grid and cash on a 1e-10 dollar grid, which makes
//! `price * quantity` exact in [`Money`].

use core::fmt;
use core::ops::{Add, AddAssign, Neg, Sub, SubAssign};

const MILLS_PER_DOLLAR: i64 = 1_000;
const PRICE_UNITS_PER_DOLLAR: i64 = 10_000;
const MICROS_PER_CONTRACT: i64 = 1_000_000;
const MONEY_UNITS_PER_DOLLAR: i128 = 10_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mills(pub i64);

impl Mills {
    pub const ONE_DOLLAR: Mills = Mills(MILLS_PER_DOLLAR);

    /// Converts a decimal dollar amount, rejecting values that are not on
    /// the mill grid (beyond float noise).
    pub fn from_dollars(value: f64) -> Option<Self> {
        if !value.is_finite() {
            return None;
        }
        let scaled = value * MILLS_PER_DOLLAR as f64;
        let rounded = libm::round(scaled);
        if libm::fabs(scaled - rounded) > 1e-6 {
            return None;
        }
        Some(Mills(rounded as i64))
    }

    pub fn to_dollars(self) -> f64 {
        self.0 as f64 / MILLS_PER_DOLLAR as f64
    }

    pub fn to_price(self) -> Price {
        Price(self.0 * (PRICE_UNITS_PER_DOLLAR / MILLS_PER_DOLLAR))
    }
}

/// A price in units of 1/10,000 dollar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Price(pub i64);

impl Price {
    pub const ONE_DOLLAR: Price = Price(PRICE_UNITS_PER_DOLLAR);

    pub fn to_dollars(self) -> f64 {
        self.0 as f64 / PRICE_UNITS_PER_DOLLAR as f64
    }

    /// Cost of `qty` contracts at this price.
    pub fn cost(self, qty: Quantity) -> Money {
        Money(self.0 as i128 * qty.0 as i128)
    }
}

/// A contract quantity in millionths of a contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Quantity(pub i64);

impl Quantity {
    pub const ZERO: Quantity = Quantity(0);

    pub fn from_contracts(contracts: i64) -> Self {
        Quantity(contracts * MICROS_PER_CONTRACT)
    }

    /// Rounds toward zero onto the micro-contract grid.
    pub fn from_real_toward_zero(contracts: f64) -> Self {
        Quantity(libm::trunc(contracts * MICROS_PER_CONTRACT as f64) as i64)
    }

    /// Rounds toward zero onto whole contracts.
    pub fn whole_toward_zero(contracts: f64) -> Self {
        Self::from_contracts(libm::trunc(contracts) as i64)
    }

    pub fn to_contracts(self) -> f64 {
        self.0 as f64 / MICROS_PER_CONTRACT as f64
    }

    /// Payout in money if every contract pays one dollar.
    pub fn payout(self) -> Money {
        Price::ONE_DOLLAR.cost(self)
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl Add for Quantity {
    type Output = Quantity;
    fn add(self, rhs: Quantity) -> Quantity {
        Quantity(self.0 + rhs.0)
    }
}

impl Neg for Quantity {
    type Output = Quantity;
    fn neg(self) -> Quantity {
        Quantity(-self.0)
    }
}

/// Money in units of 1e-10 dollar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Money(pub i128);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_dollars(dollars: f64) -> Self {
        Money(libm::round(dollars * MONEY_UNITS_PER_DOLLAR as f64) as i128)
    }

    pub fn from_cents(cents: i64) -> Self {
        Money(cents as i128 * (MONEY_UNITS_PER_DOLLAR / 100))
    }

    pub fn to_dollars(self) -> f64 {
        self.0 as f64 / MONEY_UNITS_PER_DOLLAR as f64
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl SubAssign for Money {
    fn sub_assign(&mut self, rhs: Money) {
        self.0 -= rhs.0;
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.to_dollars())
    }
}
