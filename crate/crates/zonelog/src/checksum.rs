//! CRC32C (Castagnoli) payload checksums.
//!
//! Standard reflected parameters: init 0xFFFFFFFF, reflected polynomial
//! 0x82F63B78, final xor 0xFFFFFFFF. The software path is slice-by-8; on
//! x86-64 with SSE4.2 the CRC instruction family computes the same
//! polynomial and is used instead.

const POLY: u32 = 0x82F6_3B78;

const fn build_tables() -> [[u32; 256]; 8] {
    let mut tables = [[0u32; 256]; 8];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut k = 0;
        while k < 8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ POLY } else { crc >> 1 };
            k += 1;
        }
        tables[0][i] = crc;
        i += 1;
    }
    let mut t = 1;
    while t < 8 {
        let mut i = 0;
        while i < 256 {
            let prev = tables[t - 1][i];
            tables[t][i] = (prev >> 8) ^ tables[0][(prev & 0xFF) as usize];
            i += 1;
        }
        t += 1;
    }
    tables
}

static TABLES: [[u32; 256]; 8] = build_tables();

fn update_software(mut crc: u32, data: &[u8]) -> u32 {
    let mut chunks = data.chunks_exact(8);
    for chunk in &mut chunks {
        let lo = u32::from_le_bytes(chunk[0..4].try_into().unwrap()) ^ crc;
        let hi = u32::from_le_bytes(chunk[4..8].try_into().unwrap());
        crc = TABLES[7][(lo & 0xFF) as usize]
            ^ TABLES[6][((lo >> 8) & 0xFF) as usize]
            ^ TABLES[5][((lo >> 16) & 0xFF) as usize]
            ^ TABLES[4][(lo >> 24) as usize]
            ^ TABLES[3][(hi & 0xFF) as usize]
            ^ TABLES[2][((hi >> 8) & 0xFF) as usize]
            ^ TABLES[1][((hi >> 16) & 0xFF) as usize]
            ^ TABLES[0][(hi >> 24) as usize];
    }
    for &b in chunks.remainder() {
        crc = TABLES[0][((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc
}

#[cfg(target_arch = "x86_64")]
fn update_hardware(mut crc: u32, data: &[u8]) -> u32 {
    use std::arch::x86_64::{_mm_crc32_u64, _mm_crc32_u8};
    unsafe {
        let mut chunks = data.chunks_exact(8);
        let mut wide = crc as u64;
        for chunk in &mut chunks {
            wide = _mm_crc32_u64(wide, u64::from_le_bytes(chunk.try_into().unwrap()));
        }
        crc = wide as u32;
        for &b in chunks.remainder() {
            crc = _mm_crc32_u8(crc, b);
        }
    }
    crc
}

#[cfg(target_arch = "x86_64")]
fn hardware_available() -> bool {
    std::arch::is_x86_feature_detected!("sse4.2")
}

/// CRC32C of the payload.
pub fn crc32c(data: &[u8]) -> u32 {
    let crc = !0u32;
    #[cfg(target_arch = "x86_64")]
    {
        if hardware_available() {
            return !update_hardware(crc, data);
        }
    }
    !update_software(crc, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bit-by-bit reference: reflected CRC, one bit at a time.
    fn crc32c_reference(data: &[u8]) -> u32 {
        let mut crc = !0u32;
        for &byte in data {
            crc ^= byte as u32;
            for _ in 0..8 {
                crc = if crc & 1 != 0 { (crc >> 1) ^ POLY } else { crc >> 1 };
            }
        }
        !crc
    }

    #[test]
    fn empty_payload_is_zero() {
        assert_eq!(crc32c(&[]), 0x0000_0000);
    }

    #[test]
    fn standard_check_value() {
        assert_eq!(crc32c(b"123456789"), 0xE306_9283);
        assert_eq!(crc32c_reference(b"123456789"), 0xE306_9283);
    }

    #[test]
    fn deterministic() {
        let payload = b"some payload bytes";
        assert_eq!(crc32c(payload), crc32c(payload));
    }

    #[test]
    fn software_matches_reference_on_random_payloads() {
        let mut state = 0x9E37_79B9_7F4A_7C15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as u8
        };
        for len in 0..257 {
            let payload: Vec<u8> = (0..len).map(|_| next()).collect();
            let reference = crc32c_reference(&payload);
            assert_eq!(update_software(!0, &payload) ^ !0, reference);
            assert_eq!(crc32c(&payload), reference, "len {len}");
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[test]
    fn hardware_matches_software() {
        if !hardware_available() {
            return;
        }
        let data: Vec<u8> = (0..4096u32).map(|i| (i * 31 + 7) as u8).collect();
        for len in [0, 1, 7, 8, 9, 63, 64, 65, 4095, 4096] {
            assert_eq!(
                !update_hardware(!0, &data[..len]),
                !update_software(!0, &data[..len])
            );
        }
    }
}
