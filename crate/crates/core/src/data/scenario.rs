use crate::error::{Error, Result};

/// The 11 use-based superclasses, each with its member extensions, in table order.
pub const GROUPS: [(&str, &[&str]); 11] = [
    ("Archive", &["apk", "jar", "msi", "dmg", "7z", "bz2", "deb", "gz", "pkg", "rar", "rpm", "xz", "zip"]),
    ("Audio", &["aiff", "flac", "m4a", "mp3", "ogg", "wav", "wma"]),
    ("Bitmap", &["jpg", "tiff", "heic", "bmp", "gif", "png"]),
    ("Executable", &["exe", "mach-o", "elf", "dll"]),
    ("Human-readable", &["md", "rtf", "txt", "tex", "json", "html", "xml", "log", "csv"]),
    ("Office", &["doc", "docx", "key", "ppt", "pptx", "xls", "xlsx"]),
    ("Published", &["djvu", "epub", "mobi", "pdf"]),
    ("Raw", &["arw", "cr2", "dng", "gpr", "nef", "nrw", "orf", "pef", "raf", "rw2", "3fr"]),
    ("Vector", &["ai", "eps", "psd"]),
    ("Video", &["mov", "mp4", "3gp", "avi", "mkv", "ogv", "webm"]),
    ("Miscellaneous", &["pcap", "ttf", "dwg", "sqlite"]),
];

pub const NUM_EXTENSIONS: usize = 75;

const BITMAP: usize = 2;
const RAW: usize = 7;
const VIDEO: usize = 9;

/// Non-JPEG types that share an SD card with JPEGs: camera raw, camera video and the
/// other still-photo formats.
const SCENARIO6_OTHER: [&str; 5] = ["3gp", "mov", "mkv", "tiff", "heic"];

/// All 75 extensions in table order, which is also the scenario 1 class order.
pub fn extensions() -> impl Iterator<Item = &'static str> {
    GROUPS.iter().flat_map(|(_, exts)| exts.iter().copied())
}

/// Normalizes a user-supplied extension (case, leading dot) to its table spelling.
pub fn parse_extension(s: &str) -> Result<&'static str> {
    let norm = s.trim().trim_start_matches('.').to_ascii_lowercase();
    extensions().find(|&e| e == norm).ok_or_else(|| Error::UnknownExtension {
        ext: s.to_string(),
        known: extensions().collect::<Vec<_>>().join(", "),
    })
}

/// Superclass index of an extension.
pub fn group_of(ext: &str) -> Result<usize> {
    let ext = parse_extension(ext)?;
    Ok(GROUPS.iter().position(|(_, exts)| exts.contains(&ext)).unwrap())
}

pub fn group_names() -> Vec<String> {
    GROUPS.iter().map(|(n, _)| n.to_string()).collect()
}

/// Extension to class-id table for one of the six labeling scenarios.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioMap {
    pub scenario: u8,
    pub class_names: Vec<String>,
    /// Class id per extension in table order; `None` where the scenario excludes it.
    ids: Vec<Option<u16>>,
}

/// Id of `name` in `names`, appending it if new.
fn name_id(names: &mut Vec<String>, name: &str) -> u16 {
    match names.iter().position(|n| n == name) {
        Some(i) => i as u16,
        None => {
            names.push(name.to_string());
            (names.len() - 1) as u16
        }
    }
}

impl ScenarioMap {
    pub fn new(scenario: u8) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut ids = Vec::with_capacity(NUM_EXTENSIONS);
        match scenario {
            1 => {
                for e in extensions() {
                    ids.push(Some(name_id(&mut names, e)));
                }
            }
            2 => {
                for (g, exts) in GROUPS {
                    for _ in exts.iter() {
                        ids.push(Some(name_id(&mut names, g)));
                    }
                }
            }
            3 => {
                for g in [BITMAP, RAW, VIDEO] {
                    for e in GROUPS[g].1 {
                        name_id(&mut names, e);
                    }
                }
                let other = name_id(&mut names, "other");
                for (gi, (_, exts)) in GROUPS.iter().enumerate() {
                    for e in exts.iter() {
                        let sep = [BITMAP, RAW, VIDEO].contains(&gi);
                        ids.push(Some(if sep { name_id(&mut names, e) } else { other }));
                    }
                }
            }
            4 => {
                for n in ["jpg", "raw", "video", "bitmap", "other"] {
                    name_id(&mut names, n);
                }
                for (gi, (_, exts)) in GROUPS.iter().enumerate() {
                    for &e in exts.iter() {
                        let name = match gi {
                            _ if e == "jpg" => "jpg",
                            RAW => "raw",
                            VIDEO => "video",
                            BITMAP => "bitmap",
                            _ => "other",
                        };
                        ids.push(Some(name_id(&mut names, name)));
                    }
                }
            }
            5 | 6 => {
                name_id(&mut names, "jpg");
                name_id(&mut names, "other");
                for (gi, (_, exts)) in GROUPS.iter().enumerate() {
                    for &e in exts.iter() {
                        let id = if e == "jpg" {
                            Some(0)
                        } else if scenario == 5 || gi == RAW || SCENARIO6_OTHER.contains(&e) {
                            Some(1)
                        } else {
                            None
                        };
                        ids.push(id);
                    }
                }
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown scenario {scenario}; expected 1 to 6"
                )))
            }
        }
        Ok(ScenarioMap { scenario, class_names: names, ids })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Class id of `ext`, or `None` if this scenario excludes it.
    pub fn class_of(&self, ext: &str) -> Result<Option<u16>> {
        let ext = parse_extension(ext)?;
        let i = extensions().position(|e| e == ext).unwrap();
        Ok(self.ids[i])
    }
}

/// Class id of `ext` under `scenario`; `None` means excluded.
pub fn scenario_map(scenario: u8, ext: &str) -> Result<Option<u16>> {
    ScenarioMap::new(scenario)?.class_of(ext)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_lookups() {
        assert_eq!(scenario_map(5, "jpg").unwrap(), Some(0));
        assert_eq!(scenario_map(5, "pdf").unwrap(), Some(1));
        assert_eq!(scenario_map(5, ".PDF").unwrap(), Some(1));
        let s2 = ScenarioMap::new(2).unwrap();
        let audio = s2.class_of("mp3").unwrap().unwrap();
        assert_eq!(s2.class_names[audio as usize], "Audio");
        assert_eq!(scenario_map(6, "exe").unwrap(), None);
        assert_eq!(scenario_map(6, "nef").unwrap(), Some(1));
    }

    #[test]
    fn unknown_extension_lists_known_types() {
        let err = scenario_map(1, "xyz").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("xyz") && msg.contains("mach-o") && msg.contains("sqlite"), "{msg}");
        assert!(ScenarioMap::new(7).is_err());
    }
}
