use std::sync::OnceLock;

/// Number of primes drawn from by the benchmark tasks.
pub const PRIME_COUNT: usize = 1000;

const LO: usize = 1 << 19;
const HI: usize = 1 << 20;

/// The first [`PRIME_COUNT`] primes at or above 2^19, found with a sieve of
/// Eratosthenes over `[2, 2^20)`.
pub fn primes() -> &'static [u64] {
    static PRIMES: OnceLock<Vec<u64>> = OnceLock::new();
    PRIMES.get_or_init(|| {
        let mut composite = vec![false; HI];
        let mut i = 2;
        while i * i < HI {
            if !composite[i] {
                let mut j = i * i;
                while j < HI {
                    composite[j] = true;
                    j += i;
                }
            }
            i += 1;
        }
        (LO..HI)
            .filter(|&n| !composite[n])
            .take(PRIME_COUNT)
            .map(|n| n as u64)
            .collect()
    })
}

/// Prime factorization by trial division up to the square root.
pub fn factors(n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    factorize(n, |d| out.push(d));
    out
}

/// Calls `f` with each prime factor of `n` in ascending order, with
/// multiplicity.
pub(crate) fn factorize(mut n: u64, mut f: impl FnMut(u64)) {
    while n > 0 && n % 2 == 0 {
        f(2);
        n /= 2;
    }
    let mut d = 3;
    while d * d <= n {
        while n % d == 0 {
            f(d);
            n /= d;
        }
        d += 2;
    }
    if n > 1 {
        f(n);
    }
}
