mod common;

use std::net::{Ipv4Addr, Ipv6Addr};

use addrscope::codec::{
    decode_message, decode_varint, encode_message, encode_varint, has_useful_services, is_routable, varint_len,
    DecodeError, Decoded, NetworkAddress, ServiceFlags, MAINNET_MAGIC, NON_ROUTABLE_V4, NON_ROUTABLE_V6,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn message(seed: u64) -> addrscope::codec::Message {
    common::random_message(&mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #[test]
    fn varint_round_trip(n in any::<u64>()) {
        let bytes = encode_varint(n);
        prop_assert_eq!(bytes.len(), varint_len(n));
        prop_assert_eq!(decode_varint(&bytes), Ok((n, bytes.len())));
        for cut in 0..bytes.len() {
            prop_assert!(decode_varint(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn message_round_trip(seed in any::<u64>()) {
        let msg = message(seed);
        let frame = encode_message(&msg, MAINNET_MAGIC).unwrap();
        prop_assert_eq!(
            decode_message(&frame, MAINNET_MAGIC),
            Ok(Decoded::Frame { message: msg, consumed: frame.len() })
        );
    }

    #[test]
    fn every_strict_prefix_needs_more_data(seed in any::<u64>()) {
        let frame = encode_message(&message(seed), MAINNET_MAGIC).unwrap();
        for cut in 0..frame.len() {
            prop_assert_eq!(decode_message(&frame[..cut], MAINNET_MAGIC), Ok(Decoded::NeedMoreData));
        }
    }

    #[test]
    fn concatenated_frames_decode_in_order(seeds in proptest::collection::vec(any::<u64>(), 1..8)) {
        let msgs: Vec<_> = seeds.iter().map(|&s| message(s)).collect();
        let mut stream = Vec::new();
        for m in &msgs {
            stream.extend(encode_message(m, MAINNET_MAGIC).unwrap());
        }
        let mut rest = &stream[..];
        for m in &msgs {
            match decode_message(rest, MAINNET_MAGIC).unwrap() {
                Decoded::Frame { message, consumed } => {
                    prop_assert_eq!(&message, m);
                    rest = &rest[consumed..];
                }
                Decoded::NeedMoreData => prop_assert!(false, "complete frame reported as partial"),
            }
        }
        prop_assert!(rest.is_empty());
    }

    #[test]
    fn flipped_payload_byte_fails_checksum(seed in any::<u64>(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut frame = encode_message(&message(seed), MAINNET_MAGIC).unwrap();
        prop_assume!(frame.len() > 24);
        let i = 24 + pos.index(frame.len() - 24);
        frame[i] ^= 1 << bit;
        let is_checksum_error = matches!(decode_message(&frame, MAINNET_MAGIC), Err(DecodeError::BadChecksum { .. }));
        prop_assert!(is_checksum_error);
    }

    #[test]
    fn wrong_magic_rejected(seed in any::<u64>(), magic in any::<[u8; 4]>()) {
        prop_assume!(magic != MAINNET_MAGIC);
        let frame = encode_message(&message(seed), magic).unwrap();
        let is_magic_error = matches!(decode_message(&frame, MAINNET_MAGIC), Err(DecodeError::BadMagic { .. }));
        prop_assert!(is_magic_error);
    }

    #[test]
    fn useful_services_rule(bits in any::<u64>()) {
        let witness = bits & 8 != 0;
        let network = bits & 1 != 0 || bits & 1024 != 0;
        prop_assert_eq!(has_useful_services(ServiceFlags(bits)), witness && network);
    }

    #[test]
    fn v4_routability_matches_table(raw in any::<u32>()) {
        let ip = Ipv4Addr::from(raw);
        let blocked = NON_ROUTABLE_V4.iter().any(|&(net, len)| {
            let shift = 32 - u32::from(len);
            u64::from(raw) >> shift == u64::from(u32::from(net)) >> shift
        });
        prop_assert_eq!(is_routable(&NetworkAddress::from_ipv4(ip)), !blocked);
    }
}

#[test]
fn cidr_blocks_are_closed_at_both_ends() {
    for &(net, len) in NON_ROUTABLE_V4 {
        let first = u32::from(net);
        let last = first | (u32::MAX >> len);
        for raw in [first, last] {
            assert!(!is_routable(&NetworkAddress::from_ipv4(raw.into())), "{}", Ipv4Addr::from(raw));
        }
        if let Some(after) = last.checked_add(1) {
            let inside_other = NON_ROUTABLE_V4.iter().any(|&(n, l)| {
                let mask = u32::MAX.checked_shl(32 - u32::from(l)).unwrap_or(0);
                after & mask == u32::from(n) & mask
            });
            assert_eq!(is_routable(&NetworkAddress::from_ipv4(after.into())), !inside_other);
        }
    }
    for &(net, len) in NON_ROUTABLE_V6 {
        let first = u128::from(net);
        let last = first | u128::MAX.checked_shr(u32::from(len)).unwrap_or(0);
        for raw in [first, last] {
            assert!(!is_routable(&NetworkAddress::from_ipv6(Ipv6Addr::from(raw))), "{}", Ipv6Addr::from(raw));
        }
    }
    assert!(is_routable(&"8.8.8.8".parse().unwrap()));
    assert!(is_routable(&"2a01:4f8::1".parse().unwrap()));
}
