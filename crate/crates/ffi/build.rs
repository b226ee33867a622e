use std::path::PathBuf;

fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let crate_dir = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    let config = cbindgen::Config::from_root_or_default(&crate_dir);
    match cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
    {
        // Only touches the committed header when its content changes.
        Ok(bindings) => {
            bindings.write_to_file(crate_dir.join("include/temporal_bell.h"));
        }
        Err(err) => panic!("could not generate the C header: {err}"),
    }
}
