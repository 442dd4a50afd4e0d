//! The chapters of `book/` as doc-tests, so the guide cannot drift from the
//! library.

#![doc = include_str!("../../../book/src/introduction.md")]

macro_rules! chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub mod $name {}
        )*
    };
}

chapters! {
    transfer_maps => "transfer-maps.md",
    contraction => "contraction.md",
    ensembles => "ensembles.md",
    thermodynamic_limit => "thermodynamic-limit.md",
    experiments => "experiments.md",
    reproducibility => "reproducibility.md",
    cli => "cli.md",
}
