//! TOML serialization of network descriptions.
//!
//! A config file holds one network under a `[network]` table:
//!
//! ```toml
//! [network]
//! name = "toy"
//! kind = "multi-shift"
//! neighborhood = "4c"
//!
//! [network.input]
//! channels = 3
//! height = 16
//! width = 16
//!
//! [[network.stages]]
//! out_channels = 16
//! repeats = 1
//! downsample = false
//!
//! [network.head]
//! classes = 4
//! ```
//!
//! An optional `[network.stem]` table with `out_channels` enables
//! the stem. Unknown keys are rejected rather than ignored, so typos
//! fail loudly. [`render_config`] writes a file that [`parse_config`]
//! reads back to an identical spec.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netspec::NetworkSpec;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    network: NetworkSpec,
}

/// Parses and validates a config from TOML text.
pub fn parse_config(text: &str) -> Result<NetworkSpec> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
    file.network.validate()?;
    Ok(file.network)
}

/// Renders a spec as TOML text that parses back to an equal spec.
pub fn render_config(spec: &NetworkSpec) -> String {
    let file = ConfigFile {
        network: spec.clone(),
    };
    toml::to_string_pretty(&file).expect("network specs serialize to TOML")
}

/// Reads and parses a config file from disk, naming the file in any
/// error.
pub fn load_config(path: &std::path::Path) -> Result<NetworkSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::BlockKind;
    use crate::netspec::{builtin_spec, HeadSpec, InputSpec, StageSpec, StemSpec};
    use crate::shift::NeighborhoodKind;

    const TOY: &str = r#"
[network]
name = "toy"
kind = "multi-shift"
neighborhood = "4c"

[network.input]
channels = 3
height = 16
width = 16

[[network.stages]]
out_channels = 16
repeats = 1
downsample = false

[[network.stages]]
out_channels = 32
repeats = 2
downsample = true

[network.head]
classes = 4
"#;

    #[test]
    fn hand_written_config_parses_to_the_expected_spec() {
        let spec = parse_config(TOY).unwrap();
        assert_eq!(
            spec,
            NetworkSpec {
                name: "toy".into(),
                kind: BlockKind::MultiShift,
                neighborhood: NeighborhoodKind::FourConnected,
                input: InputSpec {
                    channels: 3,
                    height: 16,
                    width: 16
                },
                stem: None,
                stages: vec![
                    StageSpec {
                        out_channels: 16,
                        repeats: 1,
                        downsample: false
                    },
                    StageSpec {
                        out_channels: 32,
                        repeats: 2,
                        downsample: true
                    },
                ],
                head: HeadSpec { classes: 4 },
            }
        );
    }

    #[test]
    fn render_then_parse_is_identity_for_every_builtin() {
        for name in crate::netspec::builtin_names() {
            let spec = builtin_spec(&name).unwrap();
            let text = render_config(&spec);
            let back = parse_config(&text).unwrap();
            assert_eq!(spec, back, "{name}\n{text}");
        }
    }

    #[test]
    fn parse_then_render_then_parse_is_stable() {
        let spec = parse_config(TOY).unwrap();
        let text = render_config(&spec);
        assert_eq!(parse_config(&text).unwrap(), spec);
        // Rendering twice gives byte-identical text.
        assert_eq!(render_config(&parse_config(&text).unwrap()), text);
    }

    #[test]
    fn stem_section_is_optional_and_round_trips() {
        let mut spec = parse_config(TOY).unwrap();
        spec.stem = Some(StemSpec { out_channels: 8 });
        let text = render_config(&spec);
        assert!(text.contains("[network.stem]"), "{text}");
        assert_eq!(parse_config(&text).unwrap(), spec);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = TOY.replace("classes = 4", "classes = 4\nwidth_mult = 2");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("width_mult"), "{err}");
    }

    #[test]
    fn bad_tokens_name_the_field() {
        let text = TOY.replace("\"multi-shift\"", "\"resnet\"");
        assert!(parse_config(&text).is_err());
        let text = TOY.replace("\"4c\"", "\"5c\"");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn invalid_specs_fail_validation_after_parsing() {
        // Parses fine, but stage widths decrease.
        let text = TOY.replace("out_channels = 32", "out_channels = 8");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("stages[1]"), "{err}");
    }

    #[test]
    fn missing_sections_are_reported() {
        let text = "[network]\nname = \"x\"\n";
        assert!(parse_config(text).is_err());
    }
}
