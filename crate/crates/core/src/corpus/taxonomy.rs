use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scoring::Role;

/// Banner label assigned by a rater. The five `*X` variants carry an extra
/// ambiguous close button.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Notice,
    Paywall,
    Full,
    FullChoices,
    Choices,
    Manage,
    FullManage,
    CornerReject,
    SettingsOnly,
    Preselected,
    Ambiguous,
    TwoBanners,
    FullX,
    FullChoicesX,
    ChoicesX,
    ManageX,
    FullManageX,
    None,
    Unreachable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComplianceClass {
    Compliant,
    LikelyCompliant,
    LikelyNotCompliant,
    NotCompliant,
}

impl ComplianceClass {
    pub const ALL: [ComplianceClass; 4] = [
        ComplianceClass::Compliant,
        ComplianceClass::LikelyCompliant,
        ComplianceClass::LikelyNotCompliant,
        ComplianceClass::NotCompliant,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ComplianceClass::Compliant => "Compliant",
            ComplianceClass::LikelyCompliant => "Likely Compliant",
            ComplianceClass::LikelyNotCompliant => "Likely Not Compliant",
            ComplianceClass::NotCompliant => "Not Compliant",
        }
    }
}

impl Category {
    pub const BANNERS: [Category; 17] = [
        Category::Notice,
        Category::Paywall,
        Category::Full,
        Category::FullChoices,
        Category::Choices,
        Category::Manage,
        Category::FullManage,
        Category::CornerReject,
        Category::SettingsOnly,
        Category::Preselected,
        Category::Ambiguous,
        Category::TwoBanners,
        Category::FullX,
        Category::FullChoicesX,
        Category::ChoicesX,
        Category::ManageX,
        Category::FullManageX,
    ];

    pub const ALL: [Category; 19] = {
        let mut all = [Category::None; 19];
        let mut i = 0;
        while i < 17 {
            all[i] = Category::BANNERS[i];
            i += 1;
        }
        all[18] = Category::Unreachable;
        all
    };

    pub fn label(self) -> &'static str {
        match self {
            Category::Notice => "Notice",
            Category::Paywall => "Paywall",
            Category::Full => "Full",
            Category::FullChoices => "Full choices",
            Category::Choices => "Choices",
            Category::Manage => "Manage",
            Category::FullManage => "Full-Manage",
            Category::CornerReject => "Corner Reject",
            Category::SettingsOnly => "Settings Only",
            Category::Preselected => "Preselected",
            Category::Ambiguous => "Ambiguous",
            Category::TwoBanners => "Two Banners",
            Category::FullX => "Full with X",
            Category::FullChoicesX => "Full choices with X",
            Category::ChoicesX => "Choices with X",
            Category::ManageX => "Manage with X",
            Category::FullManageX => "Full-Manage with X",
            Category::None => "None",
            Category::Unreachable => "Unreachable",
        }
    }

    pub fn is_banner(self) -> bool {
        !matches!(self, Category::None | Category::Unreachable)
    }

    pub fn has_x_button(self) -> bool {
        matches!(
            self,
            Category::FullX
                | Category::FullChoicesX
                | Category::ChoicesX
                | Category::ManageX
                | Category::FullManageX
        )
    }

    /// Whether screenshots with this label are scored for button salience.
    pub fn is_multi_button(self) -> bool {
        matches!(
            self,
            Category::Full
                | Category::FullChoices
                | Category::Choices
                | Category::Manage
                | Category::FullManage
                | Category::CornerReject
        ) || self.has_x_button()
    }

    /// Banners eligible for the per-location manipulation prevalence tables.
    pub fn is_compliant_subset(self) -> bool {
        matches!(
            self,
            Category::Full | Category::FullChoices | Category::CornerReject
        )
    }

    /// Boxes an annotation must carry for this label.
    pub fn required_roles(self) -> &'static [Role] {
        use Role::*;
        match self {
            Category::Full | Category::FullX => &[Banner, Accept, Reject, Manage],
            Category::FullChoices
            | Category::FullChoicesX
            | Category::FullManage
            | Category::FullManageX
            | Category::CornerReject => &[Banner, Accept, Reject],
            Category::Manage | Category::ManageX => &[Banner, Accept, Manage],
            Category::None | Category::Unreachable => &[],
            _ => &[Banner],
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn normalize(s: &str) -> String {
    s.trim()
        .to_ascii_lowercase()
        .replace(['-', '_'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

impl FromStr for Category {
    type Err = Error;

    /// Accepts the canonical labels case-insensitively; X-variants may also
    /// be written `Full X`, `Full + X` or `Full (X)`.
    fn from_str(s: &str) -> Result<Self> {
        let n = normalize(s);
        let n = n.replace(" + x", " with x").replace(" (x)", " with x");
        let n = match n.strip_suffix(" x") {
            Some(base) if !base.ends_with("with") => format!("{base} with x"),
            _ => n,
        };
        Category::ALL
            .into_iter()
            .find(|c| normalize(c.label()) == n)
            .ok_or_else(|| Error::input(format!("unknown banner category `{s}`")))
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Legal reading of each banner label.
pub fn classify_compliance(category: Category) -> Result<ComplianceClass> {
    use ComplianceClass::*;
    Ok(match category {
        Category::Notice => NotCompliant,
        Category::Paywall => LikelyCompliant,
        Category::Full | Category::FullChoices => Compliant,
        Category::Choices | Category::CornerReject => LikelyCompliant,
        Category::Manage | Category::Preselected => NotCompliant,
        Category::FullManage
        | Category::SettingsOnly
        | Category::Ambiguous
        | Category::TwoBanners => LikelyNotCompliant,
        c if c.has_x_button() => LikelyNotCompliant,
        other => {
            return Err(Error::input(format!(
                "`{other}` is not a banner category and has no compliance class"
            )))
        }
    })
}

/// String entry point used by the CLI and ingest.
pub fn classify_label(label: &str) -> Result<ComplianceClass> {
    classify_compliance(label.parse()?)
}
