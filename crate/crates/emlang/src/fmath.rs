//! Float math routed through std intrinsics when available, libm otherwise.

#[cfg(feature = "std")]
pub fn exp(x: f64) -> f64 {
    x.exp()
}
#[cfg(not(feature = "std"))]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[cfg(feature = "std")]
pub fn ln(x: f64) -> f64 {
    x.ln()
}
#[cfg(not(feature = "std"))]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[cfg(feature = "std")]
pub fn sqrt(x: f64) -> f64 {
    x.sqrt()
}
#[cfg(not(feature = "std"))]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[cfg(feature = "std")]
pub fn tanh(x: f64) -> f64 {
    x.tanh()
}
#[cfg(not(feature = "std"))]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[cfg(feature = "std")]
pub fn powf(x: f64, y: f64) -> f64 {
    x.powf(y)
}
#[cfg(not(feature = "std"))]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[cfg(feature = "std")]
pub fn abs(x: f64) -> f64 {
    x.abs()
}
#[cfg(not(feature = "std"))]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

// std has no erfc; always take libm's.
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}
