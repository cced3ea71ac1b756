use vstg_core::io::{to_rows, write_dataset, write_ground_truth, GroundTruth};
use vstg_core::{family_group_structure, generate, SynFamily, SynSpec};

use crate::{CliError, CliResult, GenerateArgs};

pub fn run(args: &GenerateArgs) -> CliResult<()> {
    let family = SynFamily::from(args.family);
    let spec = SynSpec {
        noise_std: args.noise_std,
        ..SynSpec::new(family, args.seed)
    };
    let data = generate(&spec)?;
    if args.out.exists() && !args.out.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", args.out.display())));
    }
    write_dataset(&args.out, &data.train, Some(&data.test))?;
    let masks = family_group_structure(family);
    let truth = GroundTruth {
        family: family.to_string(),
        seed: args.seed,
        noise_std: args.noise_std,
        w_true: to_rows(data.w_true.view()),
        u_true: to_rows(data.u_true.view()),
        v_true: to_rows(data.v_true.view()),
        u_mask: to_rows(masks.u.view()),
        v_mask: to_rows(masks.v.view()),
    };
    write_ground_truth(&args.out, &truth)?;
    println!(
        "wrote {family} (seed {}) with {} tasks to {}",
        args.seed,
        data.train.n_tasks(),
        args.out.display()
    );
    Ok(())
}
