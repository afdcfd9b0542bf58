//! 16-bit ones'-complement checksum in the style of RFC 1071.
//!
//! Used for the BEE record trailer and the Energy-IP / Energy-TCP headers.

/// Ones'-complement sum of `data` taken as big-endian 16-bit words, folded to
/// 16 bits. An odd trailing byte is padded with a zero low byte.
pub fn ones_complement_sum(data: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    let mut chunks = data.chunks_exact(2);
    for word in &mut chunks {
        sum += u32::from(u16::from_be_bytes([word[0], word[1]]));
    }
    if let [last] = chunks.remainder() {
        sum += u32::from(*last) << 8;
    }
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    sum as u16
}

/// Internet checksum: complement of the ones'-complement sum.
pub fn internet_checksum(data: &[u8]) -> u16 {
    !ones_complement_sum(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_sequence() {
        // 0x0102 + 0x0304 + ... + 0x2D2E = 0x21328, folded 0x132A, complemented 0xECD5.
        let data: Vec<u8> = (1u8..=46).collect();
        assert_eq!(ones_complement_sum(&data), 0x132A);
        assert_eq!(internet_checksum(&data), 0xECD5);
    }

    #[test]
    fn odd_length_pads_low_byte() {
        assert_eq!(ones_complement_sum(&[0xAB]), 0xAB00);
        assert_eq!(ones_complement_sum(&[0x12, 0x34, 0x56]), 0x1234 + 0x5600);
    }

    #[test]
    fn verifying_sum_including_checksum_is_all_ones() {
        let mut data: Vec<u8> = (10u8..40).collect();
        let c = internet_checksum(&data);
        data.extend_from_slice(&c.to_be_bytes());
        assert_eq!(ones_complement_sum(&data), 0xFFFF);
    }
}
