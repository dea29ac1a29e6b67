//! Physical constants (CODATA, exact by the 2019 SI definition where
//! applicable) and a few derived defaults.

/// Boltzmann constant [J/K].
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Reduced Planck constant [J·s].
pub const REDUCED_PLANCK: f64 = 1.054_571_817e-34;

/// Speed of light in vacuum [m/s].
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Avogadro constant [1/mol].
pub const AVOGADRO: f64 = 6.022_140_76e23;

/// Mean molecular mass of air, molar mass 28.97 g/mol [kg].
pub const AIR_MOLECULAR_MASS: f64 = 28.97e-3 / AVOGADRO;

/// Pascals per millibar.
pub const PASCALS_PER_MBAR: f64 = 100.0;
