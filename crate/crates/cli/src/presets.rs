//! Named configurations shipped with the binary.

pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub text: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "fig2-nonlinear-dsvm",
        summary: "D-SVM, log-quantized links (rho = 1), switching 2-hop digraph, alpha = 6",
        text: include_str!("../presets/fig2-nonlinear-dsvm.toml"),
    },
    Preset {
        name: "fig3-linear-dsvm",
        summary: "D-SVM with ideal links, otherwise identical to fig2-nonlinear-dsvm",
        text: include_str!("../presets/fig3-linear-dsvm.toml"),
    },
    Preset {
        name: "table1-sector-ratios",
        summary: "log-quantizer sector ratios at rho in {1.6, 1, 0.25} and their step-size bounds",
        text: include_str!("../presets/table1-sector-ratios.toml"),
    },
    Preset {
        name: "fig5-sensitivity",
        summary: "stability sweep over alpha x rho x k-hop on 8 agents, Euler eta = 0.05",
        text: include_str!("../presets/fig5-sensitivity.toml"),
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}
