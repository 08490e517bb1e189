use super::{Arch, GradientUpdate, PolicyError, PolicyParameters};
use crate::wire::{ByteReader, ByteWriter, Truncated};
use crate::PlayerId;

impl From<Truncated> for PolicyError {
    fn from(t: Truncated) -> Self {
        PolicyError::CorruptPayload(t.to_string())
    }
}

/// Wire layout: arch tag `u8`, player id (`u32` length + bytes), version
/// `u64`, value count `u32`, then each value as little-endian `f32`.
pub fn serialize_params(params: &PolicyParameters) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.u8(params.arch.tag())
        .str(params.player_id.as_str())
        .u64(params.version)
        .u32(params.values().len() as u32);
    for &v in params.values() {
        w.f32(v);
    }
    w.finish()
}

/// Decode a snapshot that must match `arch`.
pub fn deserialize_params(bytes: &[u8], arch: &Arch) -> Result<PolicyParameters, PolicyError> {
    let mut r = ByteReader::new(bytes);
    let tag = r.u8()?;
    let player = r.string()?;
    let version = r.u64()?;
    let count = r.u32()? as usize;
    if tag != arch.tag() || count != arch.param_count() {
        return Err(PolicyError::ArchMismatch {
            expected: format!("{} with {} values", arch.name(), arch.param_count()),
            found: tag,
            count,
        });
    }
    let values = (0..count).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
    if !r.is_empty() {
        return Err(PolicyError::CorruptPayload(format!(
            "{} trailing bytes",
            r.remaining()
        )));
    }
    PolicyParameters::new(PlayerId(player), version, *arch, values)
}

/// Producer id, base version `u64`, sample count `u32`, then the gradient as
/// a `u32`-counted run of little-endian `f64`.
pub fn encode_gradient(update: &GradientUpdate) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.str(&update.producer_id)
        .u64(update.base_version)
        .u32(update.sample_count)
        .f64s(&update.grad);
    w.finish()
}

pub fn decode_gradient(bytes: &[u8]) -> Result<GradientUpdate, PolicyError> {
    let mut r = ByteReader::new(bytes);
    let producer_id = r.string()?;
    let base_version = r.u64()?;
    let sample_count = r.u32()?;
    let grad = r.f64s()?;
    Ok(GradientUpdate {
        grad,
        base_version,
        sample_count,
        producer_id,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample() -> PolicyParameters {
        PolicyParameters::init(
            "red".into(),
            Arch::Mlp1 {
                inputs: 3,
                hidden: 4,
                actions: 2,
            },
            5,
        )
        .with_version(12)
    }

    #[test]
    fn layout_is_fixed() {
        let p = PolicyParameters::new("ab".into(), 7, Arch::Tabular { states: 1, actions: 1 }, vec![1.0, -2.0])
            .unwrap();
        let bytes = serialize_params(&p);
        let mut expected = vec![1u8, 2, 0, 0, 0, b'a', b'b', 7, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0];
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn truncated_stream_is_corrupt() {
        let p = sample();
        let bytes = serialize_params(&p);
        for cut in [0, 1, 5, bytes.len() - 1] {
            assert!(matches!(
                deserialize_params(&bytes[..cut], &p.arch),
                Err(PolicyError::CorruptPayload(_))
            ));
        }
    }

    #[test]
    fn wrong_arch_is_rejected() {
        let p = sample();
        let bytes = serialize_params(&p);
        let err = deserialize_params(&bytes, &Arch::Linear { inputs: 3, actions: 2 }).unwrap_err();
        assert!(matches!(err, PolicyError::ArchMismatch { found: 3, .. }));
        let err = deserialize_params(
            &bytes,
            &Arch::Mlp1 {
                inputs: 3,
                hidden: 5,
                actions: 2,
            },
        )
        .unwrap_err();
        assert!(matches!(err, PolicyError::ArchMismatch { .. }));
    }

    proptest! {
        #[test]
        fn params_round_trip(values in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 12),
                             version in any::<u64>(), name in "[a-z0-9]{0,12}") {
            let p = PolicyParameters::new(PlayerId(name), version, Arch::Linear { inputs: 2, actions: 3 }, values).unwrap();
            let q = deserialize_params(&serialize_params(&p), &p.arch).unwrap();
            prop_assert_eq!(serialize_params(&q), serialize_params(&p));
            prop_assert_eq!(q, p);
        }

        #[test]
        fn gradients_round_trip(grad in proptest::collection::vec(-1e6f64..1e6, 0..40), base in any::<u64>(), n in 1u32..1000) {
            let g = GradientUpdate { grad, base_version: base, sample_count: n, producer_id: "actor-3".into() };
            prop_assert_eq!(decode_gradient(&encode_gradient(&g)).unwrap(), g);
        }
    }
}
