fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR");
    let out = std::path::Path::new(&crate_dir).join("include").join("fr_minmax.h");
    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        include_guard: Some("FR_MINMAX_H".into()),
        header: Some("/* C ABI for the fr-minmax entropy-regularized min-max game library. */".into()),
        cpp_compat: true,
        enumeration: cbindgen::EnumConfig {
            // C enum constants share one namespace; qualify them.
            prefix_with_name: true,
            ..Default::default()
        },
        ..Default::default()
    };
    cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("cbindgen header generation")
        .write_to_file(out);
    println!("cargo:rerun-if-changed=src/lib.rs");
}
